/** The single-page editor: form, panes, slider, history.
 *
 * All rendering state flows out of service responses; the page computes no
 * model math. One edit and one sweep may be in flight at any time; slider
 * scrubbing after a prefetch swaps cached frames without touching the network.
 */

import { EditClient, EditResponse, ServiceError } from "./api.js";
import { debounce } from "./debounce.js";
import { drawHeatmap } from "./heatmap.js";
import { sparklinePath } from "./sparkline.js";
import { SweepController } from "./sweep.js";
import {
  ALPHA_MAX,
  ALPHA_MIN,
  ALPHA_STEP,
  PREFETCH_GRID,
  UiState,
  initialState,
  recordHistory,
  toEditRequest,
  validationErrors,
} from "./state.js";

const PANE_SIZE = 192;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export class App {
  state: UiState = initialState();
  sweeper: SweepController;
  private editBusy = false;
  private panes: Record<string, HTMLImageElement> = {};
  private heatCanvas!: HTMLCanvasElement;
  private form: Record<string, HTMLInputElement | HTMLSelectElement> = {};
  private slider!: HTMLInputElement;
  private sliderLabel!: HTMLSpanElement;
  private banner!: HTMLDivElement;
  private toast!: HTMLDivElement;
  private warningsBox!: HTMLUListElement;
  private errorsBox!: HTMLUListElement;
  private serviceErrors!: HTMLUListElement;
  private historyBox!: HTMLOListElement;
  private sparkline!: SVGPathElement;
  private submitButton!: HTMLButtonElement;
  private scrubDebounced: (alpha: number) => void;

  constructor(
    private root: HTMLElement,
    private client: EditClient,
    debounceMs = 120,
  ) {
    this.sweeper = new SweepController(client, PREFETCH_GRID);
    this.scrubDebounced = debounce((alpha: number) => void this.scrub(alpha), debounceMs);
    this.render();
  }

  private render(): void {
    this.root.innerHTML = "";
    const layout = el("div", { class: "layout" });

    const controls = el("section", { class: "controls" });
    controls.append(el("h1", {}, "openedit"));

    const picker = el("div", { class: "picker" });
    const upload = el("input", { type: "file", accept: "image/png", id: "upload" });
    upload.addEventListener("change", () => void this.onUpload(upload as HTMLInputElement));
    const corpusRow = el("div", { class: "corpus-row", id: "corpus-row" });
    picker.append(el("label", {}, "image"), upload, corpusRow);
    controls.append(picker);

    const form = el("div", { class: "form" });
    const kind = el("select", { id: "kind" });
    for (const k of ["change", "remove", "relative"]) kind.append(el("option", { value: k }, k));
    const source = el("input", { id: "source", placeholder: "source phrase, e.g. red circle" });
    const target = el("input", { id: "target", placeholder: "target phrase, e.g. green circle" });
    const sign = el("select", { id: "sign" });
    sign.append(el("option", { value: "1" }, "strengthen (+)"), el("option", { value: "-1" }, "weaken (-)"));
    const useOpt = el("input", { type: "checkbox", id: "use-opt" });
    for (const [label, node] of [
      ["kind", kind],
      ["source", source],
      ["target", target],
      ["sign", sign],
    ] as const) {
      const row = el("label", { class: "row" }, label);
      row.append(node);
      form.append(row);
    }
    const optRow = el("label", { class: "row" }, "per-sample optimization");
    optRow.append(useOpt);
    form.append(optRow);
    this.form = { kind, source, target, sign, useOpt } as Record<string, HTMLInputElement | HTMLSelectElement>;
    for (const node of [kind, source, target, sign, useOpt]) {
      node.addEventListener("input", () => this.syncForm());
      node.addEventListener("change", () => this.syncForm());
    }
    controls.append(form);

    this.errorsBox = el("ul", { class: "errors", id: "form-errors" });
    this.serviceErrors = el("ul", { class: "errors", id: "service-errors" });
    controls.append(this.errorsBox, this.serviceErrors);

    this.submitButton = el("button", { id: "submit" }, "apply edit");
    this.submitButton.addEventListener("click", () => void this.submit());
    controls.append(this.submitButton);

    const sliderRow = el("div", { class: "slider-row" });
    this.slider = el("input", {
      type: "range",
      id: "alpha",
      min: String(ALPHA_MIN),
      max: String(ALPHA_MAX),
      step: String(ALPHA_STEP),
      value: String(this.state.alpha),
    });
    this.sliderLabel = el("span", { id: "alpha-label" }, `α = ${this.state.alpha.toFixed(2)}`);
    this.slider.addEventListener("input", () => {
      const alpha = Number(this.slider.value);
      this.state = { ...this.state, alpha };
      this.sliderLabel.textContent = `α = ${alpha.toFixed(2)}`;
      this.scrubDebounced(alpha);
    });
    sliderRow.append(el("label", {}, "strength"), this.slider, this.sliderLabel);
    controls.append(sliderRow);

    this.banner = el("div", { class: "banner hidden", id: "banner" });
    this.toast = el("div", { class: "toast hidden", id: "toast" });
    this.warningsBox = el("ul", { class: "warnings", id: "warnings" });
    controls.append(this.banner, this.toast, this.warningsBox);

    const spark = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    spark.setAttribute("viewBox", "0 0 120 32");
    spark.setAttribute("class", "sparkline");
    this.sparkline = document.createElementNS("http://www.w3.org/2000/svg", "path");
    this.sparkline.setAttribute("id", "loss-spark");
    this.sparkline.setAttribute("fill", "none");
    this.sparkline.setAttribute("stroke", "#2a7");
    spark.append(this.sparkline);
    controls.append(spark);

    const panes = el("section", { class: "panes" });
    for (const name of ["source", "reconstruction", "edited"]) {
      const cell = el("figure", { class: "pane" });
      const img = el("img", { id: `pane-${name}`, width: String(PANE_SIZE), height: String(PANE_SIZE), alt: name });
      this.panes[name] = img;
      cell.append(img, el("figcaption", {}, name));
      if (name === "edited") {
        this.heatCanvas = el("canvas", { id: "heatmap", class: "overlay hidden" });
        const wrap = el("div", { class: "overlay-wrap" });
        wrap.append(img, this.heatCanvas);
        cell.prepend(wrap);
      }
      panes.append(cell);
    }
    const overlayToggle = el("label", { class: "row" }, "grounding overlay");
    const overlayBox = el("input", { type: "checkbox", id: "overlay-toggle" });
    overlayBox.addEventListener("change", () => this.heatCanvas.classList.toggle("hidden", !overlayBox.checked));
    overlayToggle.append(overlayBox);
    panes.append(overlayToggle);

    this.historyBox = el("ol", { class: "history", id: "history" });
    layout.append(controls, panes, this.historyBox);
    this.root.append(layout);
    this.syncForm();
    void this.loadCorpus();
  }

  private async loadCorpus(): Promise<void> {
    let ids: string[];
    try {
      ids = await this.client.corpusIds("val");
    } catch {
      return; // service may run without a corpus; upload still works
    }
    const row = this.root.querySelector("#corpus-row");
    if (!row) return;
    for (const id of ids.slice(0, 12)) {
      const thumb = el("img", {
        src: this.client.corpusImageUrl("val", id),
        class: "thumb",
        width: "32",
        height: "32",
        title: id,
      });
      thumb.addEventListener("click", () => {
        this.state = { ...this.state, image: id };
        this.panes["source"].src = this.client.corpusImageUrl("val", id);
        this.sweeper.invalidate();
        this.syncForm();
      });
      row.append(thumb);
    }
  }

  private async onUpload(input: HTMLInputElement): Promise<void> {
    const file = input.files?.[0];
    if (!file) return;
    const buf = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    for (const b of buf) binary += String.fromCharCode(b);
    const b64 = btoa(binary);
    this.state = { ...this.state, image: b64 };
    this.panes["source"].src = `data:image/png;base64,${b64}`;
    this.sweeper.invalidate();
    this.syncForm();
  }

  syncForm(): void {
    const kind = (this.form["kind"] as HTMLSelectElement).value as UiState["instruction"]["kind"];
    this.state = {
      ...this.state,
      instruction: {
        kind,
        sourcePhrase: (this.form["source"] as HTMLInputElement).value,
        targetPhrase: (this.form["target"] as HTMLInputElement).value,
        sign: (this.form["sign"] as HTMLSelectElement).value === "-1" ? -1 : 1,
      },
      useOpt: (this.form["useOpt"] as HTMLInputElement).checked,
    };
    const problems = validationErrors(this.state);
    this.errorsBox.innerHTML = "";
    for (const p of problems) this.errorsBox.append(el("li", {}, p));
    this.submitButton.disabled = problems.length > 0 || this.editBusy;
    (this.form["target"] as HTMLInputElement).disabled = kind !== "change";
    (this.form["sign"] as HTMLSelectElement).disabled = kind !== "relative";
  }

  /** Submit the current form; resolves when panes are updated. */
  async submit(): Promise<EditResponse | null> {
    if (this.editBusy || validationErrors(this.state).length > 0) return null;
    this.editBusy = true;
    this.submitButton.disabled = true;
    this.banner.classList.add("hidden");
    this.toast.classList.add("hidden");
    this.serviceErrors.innerHTML = "";
    try {
      const request = toEditRequest(this.state);
      const response = await this.client.edit(request);
      this.applyEdit(response);
      // warm the sweep cache so the slider scrubs without the network
      void this.prefetchSweep();
      return response;
    } catch (err) {
      this.showError(err);
      return null;
    } finally {
      this.editBusy = false;
      this.syncForm();
    }
  }

  private applyEdit(response: EditResponse): void {
    this.panes["edited"].src = `data:image/png;base64,${response.image_out}`;
    this.panes["reconstruction"].src = `data:image/png;base64,${response.reconstruction}`;
    drawHeatmap(this.heatCanvas, response.grounding, PANE_SIZE);
    this.warningsBox.innerHTML = "";
    for (const w of response.warnings) this.warningsBox.append(el("li", {}, w));
    this.sparkline.setAttribute("d", response.loss_trace ? sparklinePath(response.loss_trace, 120, 32) : "");
    this.state = recordHistory(this.state, response.image_out);
    const entry = this.state.history[this.state.history.length - 1];
    const li = el(
      "li",
      {},
      `${entry.instruction.kind} ${entry.instruction.sourcePhrase}` +
        (entry.instruction.targetPhrase ? ` -> ${entry.instruction.targetPhrase}` : "") +
        ` @ α=${entry.alpha.toFixed(2)}${entry.useOpt ? " (opt)" : ""}`,
    );
    this.historyBox.append(li);
  }

  async prefetchSweep(): Promise<void> {
    try {
      await this.sweeper.prefetch(toEditRequest(this.state));
    } catch (err) {
      this.showError(err);
    }
  }

  /** Slider scrub: cached frame swap; falls back to one prefetch on miss. */
  async scrub(alpha: number): Promise<void> {
    if (!this.state.image) return;
    const request = toEditRequest(this.state);
    const cached = this.sweeper.frameFor(request, alpha);
    if (cached !== null) {
      this.panes["edited"].src = `data:image/png;base64,${cached}`;
      return;
    }
    if (this.sweeper.busy) return; // one in-flight sweep at a time
    await this.prefetchSweep();
    const frame = this.sweeper.frameFor(request, alpha);
    if (frame !== null) this.panes["edited"].src = `data:image/png;base64,${frame}`;
  }

  private showError(err: unknown): void {
    if (err instanceof ServiceError) {
      if (err.status === 429 || err.status === 503) {
        this.banner.textContent = `${err.body.message} — retry in a moment`;
        this.banner.classList.remove("hidden");
      } else {
        const field = err.body.field ? ` (${err.body.field})` : "";
        this.serviceErrors.append(el("li", {}, `${err.body.message}${field}`));
      }
      return;
    }
    this.toast.textContent = "network failure; your edit was kept";
    this.toast.classList.remove("hidden");
  }
}

export function mount(root: HTMLElement, client = new EditClient()): App {
  return new App(root, client);
}
