/** Polling store for the review queue.
 *
 * Keeps the pending list fresh (default 5 s polling), submits ratings, and
 * only mutates local state from confirmed server responses: a card is removed
 * after a 204, never optimistically. A 409 is surfaced as an
 * "already rated by you" conflict; a network failure keeps the item pending
 * with a retry affordance.
 */

import { ApiClient } from './api.js';
import type { RatingScore, ReviewQueueItem } from './types.js';

export const DEFAULT_POLL_INTERVAL_MS = 5_000;

export type SubmitOutcome = 'ok' | 'conflict' | 'network-error';

export interface QueueState {
  items: ReviewQueueItem[];
  loading: boolean;
  /** draft_id -> user-facing notice from the last submit attempt */
  notices: Record<string, string>;
  lastError: string | null;
}

type Listener = (state: QueueState) => void;

export class QueueStore {
  private items: ReviewQueueItem[] = [];
  private notices: Record<string, string> = {};
  private loading = false;
  private lastError: string | null = null;
  private listeners: Listener[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly pollIntervalMs: number = DEFAULT_POLL_INTERVAL_MS,
  ) {}

  get state(): QueueState {
    return {
      items: [...this.items],
      loading: this.loading,
      notices: { ...this.notices },
      lastError: this.lastError,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    const snapshot = this.state;
    for (const listener of this.listeners) listener(snapshot);
  }

  start(): void {
    if (this.timer !== null) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollIntervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Pull every pending page, newest first. */
  async refresh(): Promise<void> {
    this.loading = true;
    this.notify();
    try {
      const items: ReviewQueueItem[] = [];
      let cursor: number | undefined;
      for (;;) {
        const page = await this.api.listDrafts('pending_review', 50, cursor);
        items.push(...page.items);
        if (page.next_cursor === null || page.items.length === 0) break;
        cursor = page.next_cursor;
      }
      this.items = items;
      this.lastError = null;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    } finally {
      this.loading = false;
      this.notify();
    }
  }

  /** Submit a rating; the card is removed only on a confirmed 204. */
  async submitRating(
    draftId: string,
    raterId: string,
    score: RatingScore,
    editedText?: string,
  ): Promise<SubmitOutcome> {
    const payload = { rater_id: raterId, score, ...(editedText !== undefined ? { edited_text: editedText } : {}) };
    let outcome: 'ok' | 'conflict';
    try {
      outcome = await this.api.submitRating(draftId, payload);
    } catch (err) {
      this.notices[draftId] = 'Network failure; the draft stays in the queue. Retry when back online.';
      this.notify();
      return 'network-error';
    }
    if (outcome === 'conflict') {
      this.notices[draftId] = 'already rated by you';
      this.notify();
      return 'conflict';
    }
    this.items = this.items.filter((item) => item.draft_id !== draftId);
    delete this.notices[draftId];
    this.notify();
    return 'ok';
  }
}
