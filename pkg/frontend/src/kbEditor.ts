/** Knowledge-base editor flow: upsert a document, then poll /v1/kb/status
 * until the index watermark catches up with the returned revision, flipping
 * the "live in retrieval" indicator. */

import { ApiClient, ApiError } from './api.js';
import type { KbDocumentPayload } from './types.js';

export type KbEditorPhase = 'idle' | 'saving' | 'indexing' | 'live' | 'error';

export interface KbEditorState {
  phase: KbEditorPhase;
  revision: number | null;
  liveInRetrieval: boolean;
  error: string | null;
}

type Listener = (state: KbEditorState) => void;

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class KbEditorController {
  private phase: KbEditorPhase = 'idle';
  private revision: number | null = null;
  private error: string | null = null;
  private listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly pollIntervalMs = 500,
    private readonly timeoutMs = 30_000,
  ) {}

  get state(): KbEditorState {
    return {
      phase: this.phase,
      revision: this.revision,
      liveInRetrieval: this.phase === 'live',
      error: this.error,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(phase: KbEditorPhase, error: string | null = null): void {
    this.phase = phase;
    this.error = error;
    const snapshot = this.state;
    for (const listener of this.listeners) listener(snapshot);
  }

  /** Upsert and wait for the re-index; resolves once the document is live. */
  async submit(doc: KbDocumentPayload): Promise<KbEditorState> {
    this.set('saving');
    let kbRevisionTarget: number;
    try {
      this.revision = await this.api.upsertDocument(doc);
      const status = await this.api.kbStatus();
      kbRevisionTarget = status.kb_revision;
      if (status.index_watermark >= kbRevisionTarget) {
        this.set('live');
        return this.state;
      }
    } catch (err) {
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.set('error', detail);
      return this.state;
    }
    this.set('indexing');
    const deadline = Date.now() + this.timeoutMs;
    while (Date.now() < deadline) {
      await sleep(this.pollIntervalMs);
      try {
        const status = await this.api.kbStatus();
        if (status.index_watermark >= kbRevisionTarget) {
          this.set('live');
          return this.state;
        }
      } catch {
        // transient poll failure: keep waiting until the deadline
      }
    }
    this.set('error', 'index did not catch up in time');
    return this.state;
  }
}
