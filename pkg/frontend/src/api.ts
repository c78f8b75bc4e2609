/** Thin typed client for the /v1 HTTP API. All server interaction in the UI
 * goes through this module; nothing is computed client-side. */

import type {
  DraftStatus,
  DraftsPage,
  KbDocumentPayload,
  KbStatus,
  RatingPayload,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`API error ${status}: ${detail}`);
  }
}

export interface ApiClientConfig {
  baseUrl: string;
  token: string;
  fetchFn?: typeof fetch;
}

async function detailOf(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? response.statusText;
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchFn: typeof fetch;

  constructor(config: ApiClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/$/, '');
    this.token = config.token;
    this.fetchFn = config.fetchFn ?? fetch;
  }

  private headers(): Record<string, string> {
    return {
      Authorization: `Bearer ${this.token}`,
      'Content-Type': 'application/json',
    };
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      ...init,
      headers: { ...this.headers(), ...(init?.headers ?? {}) },
    });
    return response;
  }

  async listDrafts(
    status: DraftStatus = 'pending_review',
    limit = 50,
    cursor?: number,
  ): Promise<DraftsPage> {
    const params = new URLSearchParams({ status, limit: String(limit) });
    if (cursor !== undefined) params.set('cursor', String(cursor));
    const response = await this.request(`/v1/drafts?${params}`);
    if (!response.ok) throw new ApiError(response.status, await detailOf(response));
    return (await response.json()) as DraftsPage;
  }

  /** 204 -> 'ok'; 409 (already rated by this rater) -> 'conflict';
   * anything else throws. */
  async submitRating(draftId: string, payload: RatingPayload): Promise<'ok' | 'conflict'> {
    const response = await this.request(`/v1/drafts/${encodeURIComponent(draftId)}/rating`, {
      method: 'POST',
      body: JSON.stringify(payload),
    });
    if (response.status === 204) return 'ok';
    if (response.status === 409) return 'conflict';
    throw new ApiError(response.status, await detailOf(response));
  }

  async markSent(draftId: string): Promise<void> {
    const response = await this.request(`/v1/drafts/${encodeURIComponent(draftId)}/sent`, {
      method: 'POST',
    });
    if (response.status !== 204) throw new ApiError(response.status, await detailOf(response));
  }

  async upsertDocument(payload: KbDocumentPayload): Promise<number> {
    const response = await this.request('/v1/kb/documents', {
      method: 'POST',
      body: JSON.stringify(payload),
    });
    if (response.status !== 202) throw new ApiError(response.status, await detailOf(response));
    const body = (await response.json()) as { revision: number };
    return body.revision;
  }

  async kbStatus(): Promise<KbStatus> {
    const response = await this.request('/v1/kb/status');
    if (!response.ok) throw new ApiError(response.status, await detailOf(response));
    return (await response.json()) as KbStatus;
  }

  async health(): Promise<boolean> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/healthz`);
      return response.ok;
    } catch {
      return false;
    }
  }
}
