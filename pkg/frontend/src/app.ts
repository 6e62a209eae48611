/** Browser entry point. All DOM wiring lives here; logic stays in the controllers. */

import { ApiClient, Meta, ProgressSnapshot } from "./api.js";
import { CardQueue } from "./queue.js";
import { actionForKey } from "./keys.js";

const api = new ApiClient("");

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function progressBar(p: ProgressSnapshot): HTMLElement {
  const wrap = el("div", "progress");
  const track = el("div", "progress-track");
  const fill = el("div", "progress-fill");
  const pct = p.total_pairs > 0 ? (100 * p.fully_reviewed) / p.total_pairs : 0;
  fill.style.width = `${pct}%`;
  track.appendChild(fill);
  wrap.appendChild(track);
  const pk = p.p_k_defined ? ` · p_k ${p.running_p_k.toFixed(3)}` : "";
  wrap.appendChild(
    el(
      "div",
      "progress-text",
      `${p.fully_reviewed}/${p.total_pairs} fully reviewed · ${p.positives_so_far} positive${pk}`,
    ),
  );
  return wrap;
}

class App {
  private queue: CardQueue | null = null;
  private brokenPairs = new Set<string>();

  constructor(private readonly root: HTMLElement) {
    document.addEventListener("keydown", (ev) => this.onKey(ev));
  }

  async start(): Promise<void> {
    let meta: Meta;
    try {
      meta = await api.meta();
    } catch (err) {
      this.root.replaceChildren(el("div", "banner", `service unreachable: ${String(err)}`));
      return;
    }
    const expert = new URLSearchParams(window.location.search).get("expert");
    if (expert && meta.experts.includes(expert)) {
      this.begin(expert);
    } else {
      this.renderPicker(meta.experts);
    }
  }

  private renderPicker(experts: string[]): void {
    const box = el("div", "picker");
    box.appendChild(el("h1", undefined, "Who is annotating?"));
    for (const name of experts) {
      const btn = el("button", "expert-btn", name);
      btn.addEventListener("click", () => {
        const url = new URL(window.location.href);
        url.searchParams.set("expert", name);
        window.history.replaceState(null, "", url);
        this.begin(name);
      });
      box.appendChild(btn);
    }
    this.root.replaceChildren(box);
  }

  private begin(expert: string): void {
    this.queue = new CardQueue(api, expert, 6, () => this.render());
    void this.queue.refill();
  }

  private onKey(ev: KeyboardEvent): void {
    if (!this.queue) return;
    const action = actionForKey(ev.key, { ctrl: ev.ctrlKey, alt: ev.altKey, meta: ev.metaKey });
    if (!action) return;
    ev.preventDefault();
    if (action.kind === "undo") {
      this.queue.undo();
    } else {
      void this.queue.vote(action.label).catch(() => this.render());
    }
  }

  private markBroken(pairId: string): void {
    if (this.brokenPairs.has(pairId)) return;
    this.brokenPairs.add(pairId);
    this.render();
  }

  private imagePanel(url: string | null, side: string, pairId: string): HTMLElement {
    const panel = el("div", `panel panel-${side}`);
    if (url === null || this.brokenPairs.has(pairId)) {
      panel.appendChild(el("div", "placeholder", "image unavailable"));
      if (url === null) this.brokenPairs.add(pairId);
      return panel;
    }
    const img = el("img");
    img.src = url;
    img.alt = side;
    img.addEventListener("error", () => this.markBroken(pairId));
    panel.appendChild(img);
    return panel;
  }

  private render(): void {
    const q = this.queue;
    if (!q) return;
    const frame = el("div", "frame");
    frame.appendChild(el("header", "who", `expert: ${q.expert}`));
    if (q.progress) frame.appendChild(progressBar(q.progress));

    if (q.state === "error") {
      const banner = el("div", "banner", `connection trouble: ${q.lastError ?? "unknown"} `);
      const retry = el("button", "retry-btn", "retry");
      retry.addEventListener("click", () => void q.refill());
      banner.appendChild(retry);
      frame.appendChild(banner);
      this.root.replaceChildren(frame);
      return;
    }
    if (q.state === "loading") {
      frame.appendChild(el("div", "loading", "loading batch..."));
      this.root.replaceChildren(frame);
      return;
    }
    if (q.state === "done") {
      const done = el("div", "done");
      done.appendChild(el("h1", undefined, "All done"));
      done.appendChild(el("p", undefined, "No pairs left for you in this round."));
      frame.appendChild(done);
      this.root.replaceChildren(frame);
      return;
    }

    const card = q.current();
    if (!card) return;
    frame.appendChild(
      el("div", "counter", `pair ${card.position_in_batch} of ${card.total_in_batch}`),
    );

    const pairBox = el("div", "pair");
    pairBox.appendChild(this.imagePanel(card.query_image_url, "query", card.pair_id));
    pairBox.appendChild(this.imagePanel(card.candidate_image_url, "candidate", card.pair_id));
    frame.appendChild(pairBox);

    const controls = el("div", "controls");
    const yes = el("button", "vote-btn yes", "similar (1/j)");
    yes.addEventListener("click", () => void q.vote(1).catch(() => this.render()));
    const no = el("button", "vote-btn no", "not similar (0/k)");
    no.addEventListener("click", () => void q.vote(0).catch(() => this.render()));
    const undo = el("button", "undo-btn", "undo (u)");
    undo.disabled = !q.canUndo;
    undo.addEventListener("click", () => q.undo());
    controls.append(yes, no, undo);
    if (this.brokenPairs.has(card.pair_id)) {
      const skipBtn = el("button", "skip-btn", "skip broken pair");
      skipBtn.addEventListener("click", () => void q.skip());
      controls.appendChild(skipBtn);
    }
    frame.appendChild(controls);

    if (q.busy) frame.appendChild(el("div", "pending", "saving vote..."));
    if (q.lastError && q.state === "ready") {
      frame.appendChild(el("div", "toast", `vote not saved: ${q.lastError} - card kept, try again`));
    }

    this.root.replaceChildren(frame);
    for (const url of q.upcomingImages()) {
      const pre = new Image();
      pre.src = url;
    }
  }
}

const rootNode = document.getElementById("app");
if (rootNode) {
  void new App(rootNode).start();
}
