/** Application controller: wires the API client, session state, and views. */

import { ApiClient, ApiError } from './api.js';
import { actionForKey } from './keyboard.js';
import { ReviewSession } from './state.js';
import type { Aspect, RatingValue } from './types.js';
import {
  renderAccountingTable,
  renderEmptyState,
  renderErrorBanner,
  renderQueueList,
  renderRatedList,
  renderRatingForm,
  renderRecordCard,
} from './view.js';

export type ViewName = 'queue' | 'rated' | 'accounting';

export class App {
  session = new ReviewSession();
  view: ViewName = 'queue';
  error: string | null = null;
  private raterId: string;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {
    this.raterId = window.localStorage.getItem('rater_id') ?? 'reviewer';
  }

  async start(): Promise<void> {
    this.root.addEventListener('click', (event) => this.onClick(event));
    document.addEventListener('keydown', (event) => this.onKey(event));
    await this.refresh();
  }

  async refresh(): Promise<void> {
    try {
      const queue = await this.api.fetchQueue('accurate_unrated');
      this.session.setItems(queue.items);
      this.error = null;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    }
    await this.render();
  }

  async render(): Promise<void> {
    this.root.replaceChildren();

    const nav = document.createElement('nav');
    nav.className = 'tabs';
    for (const name of ['queue', 'rated', 'accounting'] as ViewName[]) {
      const tab = document.createElement('button');
      tab.className = `tab${this.view === name ? ' active' : ''}`;
      tab.dataset.view = name;
      tab.textContent = name;
      nav.append(tab);
    }
    this.root.append(nav);

    if (this.error) {
      this.root.append(renderErrorBanner(this.error));
    }

    const pane = document.createElement('main');
    pane.id = 'pane';
    this.root.append(pane);

    if (this.view === 'accounting') {
      try {
        pane.append(renderAccountingTable(await this.api.fetchAccounting()));
      } catch (err) {
        pane.append(renderErrorBanner(err instanceof Error ? err.message : String(err)));
      }
      return;
    }

    if (this.view === 'rated') {
      try {
        const rated = await this.api.fetchQueue('rated');
        pane.append(renderRatedList(rated.items));
      } catch (err) {
        pane.append(renderErrorBanner(err instanceof Error ? err.message : String(err)));
      }
      return;
    }

    if (this.session.isEmpty()) {
      pane.append(renderEmptyState());
      return;
    }
    const layout = document.createElement('div');
    layout.className = 'queue-layout';
    layout.append(renderQueueList(this.session.items, this.session.cursor));
    const detail = document.createElement('div');
    detail.className = 'detail';
    const current = this.session.current();
    if (current) {
      detail.append(renderRecordCard(current));
      detail.append(
        renderRatingForm(this.session.draft, this.session.focusedAspect, this.session.inFlight),
      );
    }
    layout.append(detail);
    pane.append(layout);
  }

  private onClick(event: Event): void {
    const target = event.target as HTMLElement;
    if (target.dataset.view) {
      this.view = target.dataset.view as ViewName;
      void this.render();
      return;
    }
    if (target.id === 'retry') {
      void this.refresh();
      return;
    }
    if (target.classList.contains('rating-btn') && !this.session.inFlight) {
      this.session.setRating(
        target.dataset.aspect as Aspect,
        target.dataset.value as RatingValue,
      );
      void this.render();
      return;
    }
    if (target.id === 'submit-rating') {
      void this.submit();
    }
  }

  private onKey(event: KeyboardEvent): void {
    if (this.view !== 'queue') return;
    const action = actionForKey(event.key);
    switch (action.type) {
      case 'rate':
        if (!this.session.inFlight) {
          this.session.rateFocused(action.value);
          void this.render();
        }
        break;
      case 'focus-move':
        this.session.focusAspect(action.step);
        void this.render();
        break;
      case 'submit':
        void this.submit();
        break;
      case 'next-item':
        this.session.next();
        void this.render();
        break;
      case 'prev-item':
        this.session.prev();
        void this.render();
        break;
      case 'none':
        break;
    }
  }

  /** Optimistically advance past the current item; roll back if the API rejects. */
  async submit(): Promise<void> {
    const rating = this.session.completeDraft();
    const item = this.session.current();
    if (!rating || !item || this.session.inFlight) return;

    this.session.inFlight = true;
    await this.render();
    const removed = this.session.removeCurrent();
    try {
      await this.api.submitRating(item.cve_id, { ...rating, rater_id: this.raterId });
      // Server is the source of truth: re-fetch rather than trusting our guess.
      const queue = await this.api.fetchQueue('accurate_unrated');
      this.session.setItems(queue.items);
      this.error = null;
    } catch (err) {
      if (removed) this.session.restore(removed);
      this.error =
        err instanceof ApiError ? `Rating rejected: ${err.detail}` : 'Rating failed; queue unchanged.';
    } finally {
      this.session.inFlight = false;
      await this.render();
    }
  }
}

declare global {
  interface Window {
    __CVEMAP_API__?: string;
  }
}

export function boot(root?: HTMLElement): App {
  const mount = root ?? (document.getElementById('app') as HTMLElement);
  const app = new App(mount, new ApiClient(window.__CVEMAP_API__ ?? ''));
  void app.start();
  return app;
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  boot();
}
