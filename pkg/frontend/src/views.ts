/** DOM renderers for the three screens: choice grid, progress/train, compare.
 *
 * Renderers are stateless: they clear the container and rebuild it from
 * the props they are given, so every state change is a full re-render.
 */

import type { JobStatus } from "./api.js";
import type { CurrentFrame, Phase } from "./state.js";

export const VARIANTS = ["best-match", "forced-choice", "hybrid"] as const;

export interface GridProps {
  frame: CurrentFrame;
  locked: boolean;
  onPick: (position: number) => void;
}

export interface ProgressProps {
  phase: Phase;
  answered: number;
  total: number;
  variant: string;
  job: JobStatus | null;
  trainingError: string | null;
  onVariantChange: (variant: string) => void;
  onTrain: () => void;
}

export interface CompareProps {
  frameIds: readonly string[];
  frameId: string;
  wc: number;
  ww: number;
  originalUrl: string;
  previewUrl: string;
  onFrameChange: (frameId: string) => void;
  onWindowChange: (wc: number, ww: number) => void;
  onPreviewError: () => void;
}

/** Map a keyboard key to a grid position (keys 1..Q mirror clicks). */
export function keyToPosition(key: string, q: number): number | null {
  if (!/^[1-9]$/.test(key)) return null;
  const position = Number(key) - 1;
  return position < q ? position : null;
}

function clear(container: HTMLElement): void {
  while (container.firstChild) container.removeChild(container.firstChild);
}

function el<K extends keyof HTMLElementTagNameMap>(
  container: HTMLElement,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = container.ownerDocument.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  container.appendChild(node);
  return node;
}

/** 2x2 (for Q=4) grid of same-size candidate images; one click per frame. */
export function renderChoiceGrid(container: HTMLElement, props: GridProps): void {
  clear(container);
  const grid = el(container, "div", "choice-grid");
  const columns = Math.ceil(Math.sqrt(props.frame.images.length));
  grid.style.gridTemplateColumns = `repeat(${columns}, 1fr)`;
  props.frame.images.forEach((url, position) => {
    const button = el(grid, "button", "candidate");
    button.type = "button";
    button.disabled = props.locked;
    button.dataset.position = String(position);
    const img = el(button, "img");
    img.src = url;
    img.alt = `candidate ${position + 1}`;
    img.draggable = false;
    const hint = el(button, "span", "key-hint", String(position + 1));
    hint.ariaHidden = "true";
    img.addEventListener("error", () => {
      button.classList.add("broken");
      img.alt = "failed to load - click to retry";
    });
    button.addEventListener("click", () => {
      if (button.classList.contains("broken")) {
        // Retry the download; never record a choice for a broken image.
        button.classList.remove("broken");
        img.alt = `candidate ${position + 1}`;
        const sep = url.includes("?") ? "&" : "?";
        img.src = `${url}${sep}retry=${Date.now()}`;
        return;
      }
      if (button.disabled) return;
      props.onPick(position);
    });
  });
}

export function renderProgressAndTrain(
  container: HTMLElement,
  props: ProgressProps,
): void {
  clear(container);
  const panel = el(container, "div", "progress-panel");
  el(panel, "span", "progress-text", `${props.answered}/${props.total} answered`);
  const bar = el(panel, "progress");
  bar.max = Math.max(props.total, 1);
  bar.value = props.answered;

  if (props.phase === "choosing") return;

  const controls = el(panel, "div", "train-controls");
  const select = el(controls, "select", "variant-select");
  for (const variant of VARIANTS) {
    const option = el(select, "option", undefined, variant);
    option.value = variant;
  }
  select.value = props.variant;
  select.addEventListener("change", () => props.onVariantChange(select.value));

  const button = el(controls, "button", "train-button", "train");
  button.type = "button";
  button.disabled = props.phase === "training" && props.trainingError === null;
  button.addEventListener("click", () => props.onTrain());

  if (props.phase === "training" && props.job !== null) {
    const total = props.job.total_epochs ? `/${props.job.total_epochs}` : "";
    const loss = props.job.loss === null ? "-" : props.job.loss.toPrecision(4);
    el(panel, "span", "job-status",
       `${props.job.status}: epoch ${props.job.epoch}${total}, loss ${loss}`);
  }
  if (props.trainingError !== null) {
    el(panel, "div", "error-banner", props.trainingError);
  }
  if (props.phase === "reviewing") {
    el(panel, "span", "job-status", "training complete");
  }
}

/** Original vs denoised preview with display-window sliders. */
export function renderCompare(container: HTMLElement, props: CompareProps): void {
  clear(container);
  const panel = el(container, "div", "compare");

  const picker = el(panel, "select", "frame-picker");
  for (const frameId of props.frameIds) {
    const option = el(picker, "option", undefined, frameId);
    option.value = frameId;
  }
  picker.value = props.frameId;
  picker.addEventListener("change", () => props.onFrameChange(picker.value));

  const pair = el(panel, "div", "compare-pair");
  const left = el(pair, "figure");
  const original = el(left, "img", "original");
  original.src = props.originalUrl;
  original.alt = "original";
  el(left, "figcaption", undefined, "original");

  const right = el(pair, "figure");
  const preview = el(right, "img", "preview");
  preview.src = props.previewUrl;
  preview.alt = "denoised preview";
  preview.addEventListener("error", () => props.onPreviewError());
  el(right, "figcaption", undefined, "denoised");

  const sliders = el(panel, "div", "window-controls");
  const makeSlider = (
    label: string,
    className: string,
    min: number,
    value: number,
  ): HTMLInputElement => {
    const wrap = el(sliders, "label", "window-slider", label + " ");
    const input = el(wrap, "input", className);
    input.type = "range";
    input.min = String(min);
    input.max = "1";
    input.step = "0.01";
    input.value = String(value);
    el(wrap, "span", `${className}-value`, value.toFixed(2));
    return input;
  };
  const wcInput = makeSlider("center", "wc-slider", 0, props.wc);
  const wwInput = makeSlider("width", "ww-slider", 0.01, props.ww);
  const emit = () =>
    props.onWindowChange(Number(wcInput.value), Number(wwInput.value));
  wcInput.addEventListener("input", emit);
  wwInput.addEventListener("input", emit);
}

export function renderNoSession(container: HTMLElement): void {
  clear(container);
  el(container, "div", "no-session",
     "no session selected - open this page with ?session=<session id>");
}
