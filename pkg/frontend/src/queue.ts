/** Card queue: batch fetch, vote-then-advance, undo, skip. No DOM here. */

import { AnnotatorApi, ProgressSnapshot, TaskItem, VoteLabel } from "./api.js";

export interface UiPairCard {
  pair_id: string;
  query_image_url: string | null;
  candidate_image_url: string | null;
  position_in_batch: number;
  total_in_batch: number;
}

export type QueueState = "loading" | "ready" | "done" | "error";

export type VoteOutcome = "acked" | "busy" | "no-card";
export type UndoOutcome = "restored" | "busy" | "nothing";

/**
 * Holds the active batch for one expert and enforces the voting protocol:
 * a card leaves the screen only after the service acknowledged its vote,
 * at most one vote is in flight, and undo restores the last-voted card so
 * the next vote supersedes the earlier one server-side.
 */
export class CardQueue {
  private cards: TaskItem[] = [];
  private index = 0;
  private batchTotal = 0;
  private inFlight = false;
  private lastVoted: TaskItem | null = null;
  private _state: QueueState = "loading";
  private _progress: ProgressSnapshot | null = null;
  private _lastError: string | null = null;

  constructor(
    private readonly api: AnnotatorApi,
    readonly expert: string,
    private readonly batchSize: number = 6,
    private readonly onChange: () => void = () => {},
  ) {}

  get state(): QueueState {
    return this._state;
  }

  get progress(): ProgressSnapshot | null {
    return this._progress;
  }

  get lastError(): string | null {
    return this._lastError;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  get canUndo(): boolean {
    return this.lastVoted !== null && !this.inFlight;
  }

  current(): UiPairCard | null {
    if (this.index >= this.cards.length) return null;
    const t = this.cards[this.index];
    const completed = this.batchTotal - (this.cards.length - this.index);
    return {
      pair_id: t.pair_id,
      query_image_url: t.query_image,
      candidate_image_url: t.candidate_image,
      position_in_batch: completed + 1,
      total_in_batch: this.batchTotal,
    };
  }

  /** Image URLs of upcoming cards, for prefetching while the current renders. */
  upcomingImages(count = 2): string[] {
    const urls: string[] = [];
    for (const t of this.cards.slice(this.index + 1, this.index + 1 + count)) {
      if (t.query_image) urls.push(t.query_image);
      if (t.candidate_image) urls.push(t.candidate_image);
    }
    return urls;
  }

  /** Fetch a fresh batch. Empty response means the expert is done. */
  async refill(): Promise<void> {
    this._state = "loading";
    this.onChange();
    let tasks: TaskItem[];
    try {
      tasks = await this.api.tasks(this.expert, this.batchSize);
      this._progress = await this.api.progress();
    } catch (err) {
      this._state = "error";
      this._lastError = err instanceof Error ? err.message : String(err);
      this.onChange();
      return;
    }
    this.cards = tasks;
    this.index = 0;
    this.batchTotal = tasks.length;
    this._state = tasks.length === 0 ? "done" : "ready";
    this._lastError = null;
    this.onChange();
  }

  /**
   * Post a vote for the current card. The card is removed only after the
   * service acknowledged; on rejection or network failure it stays put and
   * the error is rethrown for the caller to surface.
   */
  async vote(label: VoteLabel): Promise<VoteOutcome> {
    if (this.inFlight) return "busy";
    const card = this.index < this.cards.length ? this.cards[this.index] : null;
    if (!card || this._state !== "ready") return "no-card";
    this.inFlight = true;
    this.onChange();
    try {
      this._progress = await this.api.vote(card.pair_id, this.expert, label);
    } catch (err) {
      this.inFlight = false;
      this._lastError = err instanceof Error ? err.message : String(err);
      this.onChange();
      throw err;
    }
    this.inFlight = false;
    this.lastVoted = card;
    this._lastError = null;
    this.cards.splice(this.index, 1);
    if (this.index >= this.cards.length) {
      await this.refill();
    } else {
      this.onChange();
    }
    return "acked";
  }

  /**
   * Bring the last-voted card back on screen. The earlier vote stays in the
   * log; voting again on the restored card supersedes it.
   */
  undo(): UndoOutcome {
    if (this.inFlight) return "busy";
    if (!this.lastVoted) return "nothing";
    this.cards.splice(this.index, 0, this.lastVoted);
    if (this.batchTotal < this.cards.length) this.batchTotal = this.cards.length;
    this.lastVoted = null;
    this._state = "ready";
    this.onChange();
    return "restored";
  }

  /**
   * Set the current card aside without voting (broken images). The pair is
   * still pending server-side, so it returns in a later batch.
   */
  async skip(): Promise<void> {
    if (this.inFlight || this.index >= this.cards.length) return;
    this.index += 1;
    if (this.index >= this.cards.length) {
      await this.refill();
    } else {
      this.onChange();
    }
  }
}
