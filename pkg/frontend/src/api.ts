/** Thin typed client over the review service API. */

import type {
  AccountingWire,
  Aspect,
  QueueWire,
  RatingValue,
  RecordWire,
  TechniqueWire,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: unknown };
      if (body && body.detail !== undefined) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep statusText
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private baseUrl: string = '') {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  fetchQueue(status = 'accurate_unrated'): Promise<QueueWire> {
    return fetch(this.url(`/api/queue?status=${encodeURIComponent(status)}`)).then((r) =>
      asJson<QueueWire>(r),
    );
  }

  fetchRecord(cveId: string): Promise<RecordWire> {
    return fetch(this.url(`/api/records/${encodeURIComponent(cveId)}`)).then((r) =>
      asJson<RecordWire>(r),
    );
  }

  submitRating(
    cveId: string,
    rating: Record<Aspect, RatingValue> & { rater_id: string },
  ): Promise<RecordWire> {
    return fetch(this.url(`/api/records/${encodeURIComponent(cveId)}/rating`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(rating),
    }).then((r) => asJson<RecordWire>(r));
  }

  fetchAccounting(): Promise<AccountingWire> {
    return fetch(this.url('/api/accounting')).then((r) => asJson<AccountingWire>(r));
  }

  fetchTechnique(techniqueId: string): Promise<TechniqueWire> {
    return fetch(this.url(`/api/kb/techniques/${encodeURIComponent(techniqueId)}`)).then((r) =>
      asJson<TechniqueWire>(r),
    );
  }
}
