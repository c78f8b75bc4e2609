/** DOM layer: renders the queue and KB editor from store state and forwards
 * user actions to the stores. No metric computation, no retrieval logic. */

import { ApiClient } from './api.js';
import { KbEditorController } from './kbEditor.js';
import { QueueStore } from './queueStore.js';
import { RATING_OPTIONS, type KbDocumentPayload, type ReviewQueueItem } from './types.js';

export interface UiConfig {
  raterId: string;
}

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

function citationList(item: ReviewQueueItem): HTMLElement {
  const details = el('details', 'citations');
  const summary = el('summary', undefined, `Evidence (${item.citations.length})`);
  details.appendChild(summary);
  for (const citation of item.citations) {
    const row = el('div', 'citation');
    row.appendChild(el('span', 'citation-rank', `[${citation.rank}]`));
    row.appendChild(el('span', 'citation-source', citation.chunk_id));
    row.appendChild(el('span', 'citation-score', citation.score.toFixed(4)));
    row.appendChild(el('p', 'citation-excerpt', citation.excerpt));
    details.appendChild(row);
  }
  return details;
}

function draftCard(item: ReviewQueueItem, store: QueueStore, config: UiConfig): HTMLElement {
  const card = el('article', 'draft-card');
  card.dataset.draftId = item.draft_id;

  const header = el('header');
  header.appendChild(el('h3', undefined, item.inquiry.text));
  header.appendChild(el('span', 'meta', `${item.config} · ${item.created_at}`));
  card.appendChild(header);

  card.appendChild(el('p', 'response', item.response));
  card.appendChild(citationList(item));

  const editor = el('textarea', 'edited-text') as HTMLTextAreaElement;
  editor.placeholder = 'Edited response (submitted with "send with some edits")';
  editor.value = item.response;
  editor.hidden = true;
  card.appendChild(editor);

  const notice = el('p', 'notice');
  notice.hidden = true;
  card.appendChild(notice);

  const actions = el('div', 'actions');
  for (const option of RATING_OPTIONS) {
    const button = el('button', `rate rate-${option.score}`, option.label);
    button.addEventListener('click', async () => {
      if (option.score === 1 && editor.hidden) {
        editor.hidden = false; // first click reveals the editor, second submits
        editor.focus();
        return;
      }
      const editedText = option.score === 1 ? editor.value : undefined;
      const outcome = await store.submitRating(item.draft_id, config.raterId, option.score, editedText);
      if (outcome !== 'ok') {
        notice.textContent = store.state.notices[item.draft_id] ?? 'submission failed';
        notice.hidden = false;
      }
    });
    actions.appendChild(button);
  }
  card.appendChild(actions);
  return card;
}

export function renderQueue(root: HTMLElement, store: QueueStore, config: UiConfig): void {
  const container = el('section', 'queue');
  root.appendChild(container);
  store.subscribe((state) => {
    container.replaceChildren();
    if (state.lastError) {
      container.appendChild(el('p', 'error', `Cannot reach the service: ${state.lastError}`));
    }
    if (state.items.length === 0 && !state.loading) {
      container.appendChild(el('p', 'empty-state', 'No drafts waiting for review.'));
      return;
    }
    for (const item of state.items) {
      const card = draftCard(item, store, config);
      const notice = state.notices[item.draft_id];
      if (notice) {
        const node = card.querySelector('.notice') as HTMLElement;
        node.textContent = notice;
        node.hidden = false;
      }
      container.appendChild(card);
    }
  });
}

export function renderKbEditor(root: HTMLElement, controller: KbEditorController): void {
  const section = el('section', 'kb-editor');
  section.appendChild(el('h2', undefined, 'Update knowledge base'));
  const form = el('form') as HTMLFormElement;

  const docId = el('input') as HTMLInputElement;
  docId.name = 'doc_id';
  docId.placeholder = 'document id';
  docId.required = true;

  const sourceKind = el('select') as HTMLSelectElement;
  sourceKind.name = 'source_kind';
  for (const kind of ['regulation', 'webpage', 'faq', 'qa_history']) {
    const option = el('option', undefined, kind) as HTMLOptionElement;
    option.value = kind;
    sourceKind.appendChild(option);
  }

  const title = el('input') as HTMLInputElement;
  title.name = 'title';
  title.placeholder = 'title';

  const text = el('textarea') as HTMLTextAreaElement;
  text.name = 'text';
  text.placeholder = 'document text';
  text.required = true;

  const submit = el('button', undefined, 'Save document') as HTMLButtonElement;
  submit.type = 'submit';

  const status = el('p', 'kb-status');
  const indicator = el('span', 'live-indicator', 'live in retrieval');
  indicator.hidden = true;

  form.append(docId, sourceKind, title, text, submit);
  section.append(form, status, indicator);
  root.appendChild(section);

  controller.subscribe((state) => {
    indicator.hidden = !state.liveInRetrieval;
    switch (state.phase) {
      case 'saving':
        status.textContent = 'Saving…';
        break;
      case 'indexing':
        status.textContent = `Saved as revision ${state.revision}; waiting for the index…`;
        break;
      case 'live':
        status.textContent = `Revision ${state.revision} is live.`;
        break;
      case 'error':
        status.textContent = `Failed: ${state.error}`;
        break;
      default:
        status.textContent = '';
    }
  });

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const payload: KbDocumentPayload = {
      doc_id: docId.value.trim(),
      source_kind: sourceKind.value as KbDocumentPayload['source_kind'],
      title: title.value.trim() || docId.value.trim(),
      text: text.value,
    };
    void controller.submit(payload);
  });
}

export function mountApp(root: HTMLElement, api: ApiClient, config: UiConfig): QueueStore {
  const store = new QueueStore(api);
  renderQueue(root, store, config);
  renderKbEditor(root, new KbEditorController(api));
  store.start();
  return store;
}
