import { ApiClient } from "./api.js";
import { SessionFlow } from "./state.js";
import type { Mode, VetReason } from "./types.js";
import { VET_REASONS } from "./types.js";
import { attachZoomPan } from "./viewer.js";

const app = document.getElementById("app") as HTMLElement;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) {
    if (k === "class") node.className = v;
    else node.setAttribute(k, v);
  }
  node.append(...children);
  return node;
}

function renderStart(): void {
  const label = el("input", { type: "text", placeholder: "participant label", value: "" });
  const mode = el("select", {});
  mode.append(el("option", { value: "study" }, "study: pick the inconsistent object"));
  mode.append(el("option", { value: "vet" }, "vet: accept or reject pairs"));
  const start = el("button", { class: "primary" }, "Start session");
  start.addEventListener("click", async () => {
    const flow = new SessionFlow(new ApiClient(), mode.value as Mode);
    start.setAttribute("disabled", "true");
    try {
      await flow.start(label.value.trim() || "anonymous");
      renderFlow(flow);
    } catch (err) {
      start.removeAttribute("disabled");
      banner(`could not start: ${err instanceof Error ? err.message : err}`);
    }
  });
  app.replaceChildren(
    el("div", { class: "card" },
      el("h1", {}, "Pair review"),
      el("p", { class: "hint" }, "Two photos of the same static scene. In study mode, pick the letter of the object whose pose the camera motion cannot explain."),
      label, mode, start),
  );
}

let bannerTimer: number | undefined;
function banner(text: string): void {
  let b = document.getElementById("banner");
  if (!b) {
    b = el("div", { id: "banner" });
    document.body.append(b);
  }
  b.textContent = text;
  b.classList.add("visible");
  window.clearTimeout(bannerTimer);
  bannerTimer = window.setTimeout(() => b?.classList.remove("visible"), 4000);
}

function renderFlow(flow: SessionFlow): void {
  if (flow.phase === "done") {
    app.replaceChildren(
      el("div", { class: "card" },
        el("h1", {}, "All done"),
        el("p", {}, `You completed ${flow.completed} item(s). Thank you!`)),
    );
    window.onkeydown = null;
    return;
  }
  if (flow.phase === "error") {
    const retry = el("button", { class: "primary" }, "Retry");
    retry.addEventListener("click", async () => {
      await flow.retry();
      renderFlow(flow);
    });
    app.replaceChildren(
      el("div", { class: "card" },
        el("h1", {}, "Connection trouble"),
        el("p", {}, flow.lastError ?? "request failed"), retry),
    );
    return;
  }
  const item = flow.item;
  if (!item) return;

  const panes = item.images.map((src, i) => {
    const img = el("img", { src, draggable: "false" });
    const pane = el("div", { class: "pane" }, img);
    attachZoomPan(pane, img);
    return el("figure", {}, pane, el("figcaption", {}, i === 0 ? "reference view (labeled)" : "second view"));
  });

  const grid = el("div", { class: "letters" });
  const submitLetter = async (letter: string) => {
    const result = await flow.submitLetter(letter);
    if (result === "invalid") banner(`"${letter}" is not one of the choices`);
    if (result === "submitted" || result === "done") renderFlow(flow);
  };
  for (const letter of item.letters) {
    const b = el("button", { class: "letter" }, letter);
    b.addEventListener("click", () => void submitLetter(letter));
    grid.append(b);
  }

  const header = el("div", { class: "topbar" },
    el("span", {}, flow.mode === "study" ? "Which labeled object is inconsistent?" : "Vetting"),
    el("span", { class: "progress" }, flow.progressText()));

  const body = el("div", { class: "card wide" }, header, el("div", { class: "pair" }, ...panes));

  if (flow.mode === "vet") {
    const badge = el("p", { class: "vet-answer" },
      `edited object: ${item.correct_letter ?? "?"} (variant: ${item.variant ?? "unknown"})`);
    const reason = el("select", {});
    for (const r of VET_REASONS) reason.append(el("option", { value: r }, r.replaceAll("_", " ")));
    const note = el("input", { type: "text", placeholder: "note (optional)" });
    const accept = el("button", { class: "primary" }, "Accept");
    const reject = el("button", { class: "danger" }, "Reject");
    accept.addEventListener("click", async () => {
      await flow.submitVet("accept", null);
      renderFlow(flow);
    });
    reject.addEventListener("click", async () => {
      await flow.submitVet("reject", reason.value as VetReason, note.value);
      renderFlow(flow);
    });
    body.append(badge, el("div", { class: "vet-controls" }, accept, reject, reason, note));
    window.onkeydown = null;
  } else {
    body.append(grid, el("p", { class: "hint" }, "press the letter key to answer"));
    window.onkeydown = (ev) => {
      const key = ev.key.toUpperCase();
      if (/^[A-Z]$/.test(key)) void submitLetter(key);
    };
  }
  app.replaceChildren(body);
}

renderStart();
