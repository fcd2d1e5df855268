// Evidence panel: the raw numeric view and the narrative side by side.
// Hovering a narrative clause highlights the feature rows backing it,
// using the grounding map the explain stage publishes.

import { tableOf } from './chat';
import type { EvidenceDoc, GroundingEntry, TraceMessage } from './types';

export function extractEvidence(
  messages: TraceMessage[],
): { evidence: EvidenceDoc; narrative: string; grounding: GroundingEntry[] } | null {
  for (let i = messages.length - 1; i >= 0; i--) {
    if (messages[i].Stage !== 'explain') continue;
    const payload = messages[i].Payload as Record<string, unknown>;
    const docs = payload['Evidence'] as EvidenceDoc[] | undefined;
    if (!docs || !docs.length) return null;
    return {
      evidence: docs[0],
      narrative: (payload['Narrative'] as string) ?? '',
      grounding: (payload['Grounding Map'] as GroundingEntry[]) ?? [],
    };
  }
  return null;
}

export function renderEvidencePanel(root: HTMLElement, messages: TraceMessage[]): void {
  root.textContent = '';
  const found = extractEvidence(messages);
  if (!found) {
    const empty = document.createElement('p');
    empty.className = 'no-evidence';
    empty.textContent = 'This turn carried no evidence.';
    root.appendChild(empty);
    return;
  }
  const { evidence, narrative, grounding } = found;

  const panel = document.createElement('div');
  panel.className = 'evidence-split';

  // Left: the raw numbers, exactly as the detector reported them.
  const raw = document.createElement('div');
  raw.className = 'evidence-raw';
  const scoreLine = document.createElement('p');
  scoreLine.className = 'score-line';
  scoreLine.textContent =
    `${evidence['Transaction']}  p=${evidence['Probability']}  (${evidence['Risk Band']})`;
  raw.appendChild(scoreLine);

  const table = tableOf(
    ['Feature', 'Value', 'Contribution'],
    evidence['Top Features'].map((row) => [
      row['Name'], String(row['Value']), String(row['Contribution']),
    ]),
    'evidence-table',
  );
  const bodyRows = Array.from(table.querySelectorAll('tbody tr'));
  evidence['Top Features'].forEach((row, i) => {
    (bodyRows[i] as HTMLElement).dataset.feature = row['Name'];
  });
  raw.appendChild(table);
  panel.appendChild(raw);

  // Right: the narrative, split into hoverable clauses.
  const story = document.createElement('div');
  story.className = 'evidence-narrative';
  let remainder = narrative;
  for (const entry of grounding) {
    const at = remainder.indexOf(entry['Clause']);
    if (at < 0) continue;
    if (at > 0) story.appendChild(document.createTextNode(remainder.slice(0, at)));
    const clause = document.createElement('span');
    clause.className = 'clause';
    clause.textContent = entry['Clause'];
    clause.dataset.features = entry['Features'].join(',');
    clause.addEventListener('mouseenter', () => highlight(table, entry['Features'], true));
    clause.addEventListener('mouseleave', () => highlight(table, entry['Features'], false));
    story.appendChild(clause);
    remainder = remainder.slice(at + entry['Clause'].length);
  }
  story.appendChild(document.createTextNode(remainder));
  panel.appendChild(story);
  root.appendChild(panel);
}

function highlight(table: HTMLTableElement, features: string[], on: boolean): void {
  for (const row of Array.from(table.querySelectorAll('tbody tr'))) {
    const el = row as HTMLElement;
    if (features.includes(el.dataset.feature ?? '')) {
      el.classList.toggle('highlight', on);
    }
  }
}
