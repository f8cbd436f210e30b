from .config import RunConfig
from .checkpoint import load_generator, load_vse, save_checkpoint
from .editing import EditPipeline, EditResult, SweepFrame
from .evaluation import EvalReport, evaluate, write_report
from .training import caption_to_image_r1, reconstruction_l2, train_decoder, train_vse
