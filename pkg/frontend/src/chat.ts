// Chat pane rendering: narrative cards with risk badges, score tables,
// inline clarification prompts, and a retryable error banner.

import type { CompletedTurn, ScoreRow } from './types';
import type { TranscriptState } from './transcript';
import { refinementChips } from './transcript';

export function riskColor(band: string): string {
  switch (band) {
    case 'high':
      return '#c0392b';
    case 'moderate':
      return '#e67e22';
    case 'low':
      return '#27ae60';
    default:
      return '#7f8c8d';
  }
}

export function riskBadge(band: string): HTMLElement {
  const badge = document.createElement('span');
  badge.className = `badge badge-${band}`;
  badge.style.background = riskColor(band);
  badge.textContent = band;
  return badge;
}

function cell(tag: 'td' | 'th', content: string | HTMLElement): HTMLElement {
  const el = document.createElement(tag);
  if (typeof content === 'string') el.textContent = content;
  else el.appendChild(content);
  return el;
}

export function tableOf(titles: string[], rows: (string | HTMLElement)[][],
                        className: string): HTMLTableElement {
  const table = document.createElement('table');
  table.className = className;
  const thead = document.createElement('thead');
  const headRow = document.createElement('tr');
  for (const title of titles) headRow.appendChild(cell('th', title));
  thead.appendChild(headRow);
  table.appendChild(thead);
  const tbody = document.createElement('tbody');
  for (const row of rows) {
    const tr = document.createElement('tr');
    for (const value of row) tr.appendChild(cell('td', value));
    tbody.appendChild(tr);
  }
  table.appendChild(tbody);
  return table;
}

export function scoreTable(scores: ScoreRow[]): HTMLTableElement {
  // Rendered verbatim from the payload: the UI never reformats scores
  // beyond displaying the server's own number.
  return tableOf(
    ['Transaction', 'Probability', 'Label', 'Risk Band'],
    scores.map((row) => [
      row['Transaction'],
      String(row['Probability']),
      row['Label'],
      riskBadge(row['Risk Band']),
    ]),
    'scores',
  );
}

export function narrativeCard(
  turn: CompletedTurn,
  onInspect: (turn: CompletedTurn) => void,
): HTMLElement {
  const card = document.createElement('article');
  card.className = 'card';
  card.dataset.traceId = turn.traceId;

  const user = document.createElement('p');
  user.className = 'user-text';
  user.textContent = turn.userText;
  card.appendChild(user);

  const reply = document.createElement('p');
  reply.className = 'reply';
  reply.textContent = turn.reply;
  card.appendChild(reply);

  if (turn.scores.length) {
    card.appendChild(riskBadge(turn.scores[0]['Risk Band']));
    card.appendChild(scoreTable(turn.scores));
  }
  if (turn.error) {
    const err = document.createElement('p');
    err.className = 'turn-error';
    err.textContent = `error: ${turn.error}`;
    card.appendChild(err);
  }

  const inspect = document.createElement('button');
  inspect.className = 'inspect';
  inspect.type = 'button';
  inspect.textContent = 'inspect trace';
  inspect.addEventListener('click', () => onInspect(turn));
  card.appendChild(inspect);
  return card;
}

export interface ChatHandlers {
  onSend: (text: string) => void;
  onChip: (text: string) => void;
  onInspect: (turn: CompletedTurn) => void;
}

export function renderChatPane(
  root: HTMLElement,
  state: TranscriptState,
  handlers: ChatHandlers,
): void {
  root.textContent = '';

  if (state.banner) {
    const banner = document.createElement('div');
    banner.className = 'banner';
    banner.textContent = state.banner;
    const retry = document.createElement('button');
    retry.type = 'button';
    retry.textContent = 'retry';
    retry.addEventListener('click', () => handlers.onSend(state.draft));
    banner.appendChild(retry);
    root.appendChild(banner);
  }

  const feed = document.createElement('div');
  feed.className = 'feed';
  for (const turn of state.turns) {
    feed.appendChild(narrativeCard(turn, handlers.onInspect));
  }
  if (state.pendingClarification) {
    const prompt = document.createElement('div');
    prompt.className = 'clarification';
    prompt.textContent = state.pendingClarification;
    feed.appendChild(prompt);
  }
  root.appendChild(feed);

  const chips = document.createElement('div');
  chips.className = 'chips';
  for (const text of refinementChips(state)) {
    const chip = document.createElement('button');
    chip.type = 'button';
    chip.className = 'chip';
    chip.textContent = text;
    chip.disabled = state.inFlight;
    chip.addEventListener('click', () => handlers.onChip(text));
    chips.appendChild(chip);
  }
  root.appendChild(chips);

  const form = document.createElement('form');
  form.className = 'composer';
  const input = document.createElement('input');
  input.type = 'text';
  input.name = 'message';
  input.placeholder = 'Ask about a transaction or a wallet window';
  input.value = state.draft;
  // One in-flight turn per session: the composer locks while waiting.
  input.disabled = state.inFlight;
  const send = document.createElement('button');
  send.type = 'submit';
  send.textContent = state.inFlight ? 'working' : 'send';
  send.disabled = state.inFlight;
  form.appendChild(input);
  form.appendChild(send);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    if (input.value.trim()) handlers.onSend(input.value);
  });
  root.appendChild(form);
}
