// Trace inspector: the turn's stages in pipeline order, each payload
// expandable, with backend-fallback annotations flagged loudly.

import type { TraceMessage } from './types';

export function stagePanel(message: TraceMessage): HTMLElement {
  const panel = document.createElement('details');
  panel.className = `stage stage-${message.Stage}`;

  const summary = document.createElement('summary');
  const name = document.createElement('strong');
  name.textContent = message.Stage;
  summary.appendChild(name);
  const timing = document.createElement('span');
  timing.className = 'timing';
  timing.textContent = ` ${message['Duration Ms'].toFixed(1)} ms`;
  summary.appendChild(timing);
  if (message.Annotations.length) {
    const flag = document.createElement('span');
    flag.className = 'fallback-flag';
    flag.textContent = ` backend fallback: ${message.Annotations.join('; ')}`;
    summary.appendChild(flag);
  }
  panel.appendChild(summary);

  const payload = document.createElement('pre');
  payload.className = 'payload';
  payload.textContent = JSON.stringify(message.Payload, null, 2);
  panel.appendChild(payload);
  return panel;
}

export function renderTraceInspector(
  root: HTMLElement,
  traceId: string,
  messages: TraceMessage[] | null,
): void {
  root.textContent = '';
  const heading = document.createElement('h2');
  heading.textContent = `Trace ${traceId}`;
  root.appendChild(heading);

  if (messages === null) {
    const missing = document.createElement('p');
    missing.className = 'not-found';
    missing.textContent = 'No such trace in this session.';
    root.appendChild(missing);
    return;
  }
  for (const message of messages) {
    root.appendChild(stagePanel(message));
  }
}
