/** JSON payload shapes served by the /v1 API. The UI never derives or
 * fabricates fields beyond these. */

export interface Citation {
  chunk_id: string;
  score: number;
  rank: number;
  excerpt: string;
}

export interface InquirySnapshot {
  inquiry_id: string;
  text: string;
  channel: string;
}

export type DraftStatus = 'pending_review' | 'rated' | 'sent';

export interface ReviewQueueItem {
  draft_id: string;
  status: DraftStatus;
  created_at: string;
  config: string;
  inquiry: InquirySnapshot;
  response: string;
  citations: Citation[];
  seq: number;
}

export interface DraftsPage {
  items: ReviewQueueItem[];
  next_cursor: number | null;
}

export type RatingScore = 0 | 1 | 2;

export interface RatingPayload {
  rater_id: string;
  score: RatingScore;
  edited_text?: string;
}

export interface KbDocumentPayload {
  doc_id: string;
  source_kind: 'regulation' | 'webpage' | 'faq' | 'qa_history';
  title: string;
  text: string;
  metadata?: Record<string, string>;
}

export interface KbStatus {
  kb_revision: number;
  index_watermark: number;
}

/** The three staff judgment options, labelled with the wording the rating
 * scale was defined with. */
export const RATING_OPTIONS: ReadonlyArray<{ score: RatingScore; label: string }> = [
  { score: 0, label: '0 - would not have sent in any form' },
  { score: 1, label: '1 - would have sent with some edits' },
  { score: 2, label: '2 - would have sent without edits' },
];
