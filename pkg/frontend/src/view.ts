/** DOM rendering. Pure functions from wire data to elements; no fetching. */

import type { RatingDraft } from './state.js';
import {
  ASPECTS,
  RATING_VALUES,
  TECHNIQUE_ID_RE,
  type AccountingWire,
  type Aspect,
  type RecordWire,
  type TechniqueClaim,
  type ValidationWire,
} from './types.js';

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

export function affectedSummary(record: RecordWire): string {
  if (record.cve.affected.length === 0) return '(none)';
  return record.cve.affected
    .map((a) => {
      const head = [a.vendor, a.product].filter(Boolean).join(' ');
      return a.versions.length ? `${head} (${a.versions.join(', ')})` : head;
    })
    .join('; ');
}

/** Ids the validator flagged, so their claims render with a warning badge. */
export function offendingIds(validation: ValidationWire): Set<string> {
  const ids = new Set<string>();
  for (const offense of validation.offenses) {
    const id = offense.claim_or_fragment.split(' ')[0];
    if (id) ids.add(id);
  }
  return ids;
}

function claimNode(claim: TechniqueClaim, flagged: boolean): HTMLElement {
  const li = el('li', 'claim');
  const idSpan = el('span', 'claim-id', claim.id);
  idSpan.dataset.techniqueId = claim.id;
  li.append(idSpan, el('span', 'claim-name', claim.name));
  if (flagged || !TECHNIQUE_ID_RE.test(claim.id)) {
    li.append(el('span', 'badge badge-hallucinated', 'hallucinated'));
  }
  if (claim.reason) li.append(el('div', 'claim-reason', claim.reason));
  return li;
}

const SECTION_TITLES: Array<[keyof NonNullable<RecordWire['mapping']> & string, string]> = [
  ['exploitation_techniques', 'Exploitation Techniques'],
  ['primary_impacts', 'Primary Impacts'],
  ['secondary_impacts', 'Secondary Impacts'],
];

export function renderRecordCard(record: RecordWire): HTMLElement {
  const card = el('article', 'record-card');
  card.dataset.cveId = record.cve_id;

  const header = el('header', 'record-header');
  header.append(el('h2', 'cve-id', record.cve_id));
  const badge = el(
    'span',
    `badge badge-${record.validation.status}`,
    record.validation.status,
  );
  header.append(badge);
  card.append(header);

  card.append(el('p', 'cve-affected', `Affected: ${affectedSummary(record)}`));
  card.append(el('p', 'cve-description', record.cve.description));

  if (record.validation.offenses.length > 0) {
    const list = el('ul', 'offense-list');
    for (const offense of record.validation.offenses) {
      list.append(el('li', 'offense', `${offense.kind}: ${offense.claim_or_fragment}`));
    }
    card.append(list);
  }

  const flagged = offendingIds(record.validation);
  const tree = el('div', 'mapping-tree');
  if (record.mapping) {
    for (const [key, title] of SECTION_TITLES) {
      const section = el('section', `mapping-section section-${key}`);
      section.append(el('h3', 'section-title', title));
      const list = el('ul', 'claim-list');
      const claims = record.mapping[key] as TechniqueClaim[];
      if (claims.length === 0) list.append(el('li', 'claim claim-empty', '(none)'));
      for (const claim of claims) list.append(claimNode(claim, flagged.has(claim.id)));
      section.append(list);
      tree.append(section);
    }
  } else {
    tree.append(el('p', 'no-mapping', 'Output could not be parsed; raw text below.'));
    tree.append(el('pre', 'raw-output', record.raw_output));
  }
  card.append(tree);

  const retrieved = el('details', 'retrieved');
  retrieved.append(el('summary', undefined, `Retrieved context (${record.retrieved.length})`));
  const lines = el('ol', 'retrieved-lines');
  for (const hit of record.retrieved) {
    const li = el('li', 'retrieved-line', `${hit.technique_id}: ${hit.name}`);
    li.dataset.rank = String(hit.rank);
    lines.append(li);
  }
  retrieved.append(lines);
  card.append(retrieved);

  return card;
}

export function renderRatingForm(
  draft: RatingDraft,
  focused: Aspect,
  inFlight: boolean,
): HTMLElement {
  const form = el('div', 'rating-form');
  for (const aspect of ASPECTS) {
    const row = el('div', `rating-row${aspect === focused ? ' focused' : ''}`);
    row.dataset.aspect = aspect;
    row.append(el('span', 'aspect-label', aspect));
    for (const [i, value] of RATING_VALUES.entries()) {
      const button = el('button', 'rating-btn', `${i + 1} ${value}`);
      button.dataset.aspect = aspect;
      button.dataset.value = value;
      if (draft[aspect] === value) button.classList.add('selected');
      if (inFlight) button.disabled = true;
      row.append(button);
    }
    form.append(row);
  }
  const submit = el('button', 'submit-btn', inFlight ? 'Submitting…' : 'Submit (Enter)');
  submit.id = 'submit-rating';
  submit.disabled = inFlight || !ASPECTS.every((a) => draft[a] !== undefined);
  form.append(submit);
  return form;
}

export function renderQueueList(items: RecordWire[], cursor: number): HTMLElement {
  const list = el('ul', 'queue-list');
  items.forEach((record, i) => {
    const li = el('li', `queue-item${i === cursor ? ' active' : ''}`);
    li.dataset.cveId = record.cve_id;
    li.append(el('span', 'queue-cve', record.cve_id));
    li.append(el('span', `badge badge-${record.lifecycle}`, record.lifecycle));
    list.append(li);
  });
  return list;
}

export function renderRatedList(items: RecordWire[]): HTMLElement {
  const list = el('ul', 'rated-list');
  for (const record of items) {
    const li = el('li', 'rated-item');
    li.dataset.cveId = record.cve_id;
    const rating = record.rating
      ? `${record.rating.accuracy}/${record.rating.relevance}/${record.rating.practicality}`
      : '';
    li.append(el('span', 'queue-cve', record.cve_id));
    li.append(el('span', `badge badge-${record.lifecycle}`, record.lifecycle));
    li.append(el('span', 'rating-summary', rating));
    list.append(li);
  }
  return list;
}

export function renderEmptyState(): HTMLElement {
  const box = el('div', 'empty-state');
  box.append(el('h2', undefined, 'Queue is empty'));
  box.append(el('p', undefined, 'No mappings are waiting for review.'));
  return box;
}

export function renderAccountingTable(accounting: AccountingWire): HTMLElement {
  const table = el('table', 'accounting-table');
  const head = el('tr');
  for (const column of ['Year', '#CVE', 'Raw', 'Accurate', 'Curated']) {
    head.append(el('th', undefined, column));
  }
  table.append(head);

  const years = Object.keys(accounting.per_year).sort();
  for (const year of years) {
    const counts = accounting.per_year[year];
    const row = el('tr', 'accounting-row');
    row.dataset.year = year;
    for (const value of [year, counts.cve_count, counts.raw, counts.accurate, counts.curated]) {
      row.append(el('td', undefined, String(value)));
    }
    table.append(row);
  }
  const totals = accounting.totals;
  const row = el('tr', 'accounting-totals');
  for (const value of ['Total', totals.cve_count, totals.raw, totals.accurate, totals.curated]) {
    row.append(el('td', undefined, String(value)));
  }
  table.append(row);
  return table;
}

export function renderErrorBanner(message: string, retryLabel = 'Retry'): HTMLElement {
  const banner = el('div', 'error-banner');
  banner.append(el('span', 'error-text', message));
  const retry = el('button', 'retry-btn', retryLabel);
  retry.id = 'retry';
  banner.append(retry);
  return banner;
}
