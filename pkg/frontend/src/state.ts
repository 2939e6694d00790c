/** Review session state: the pending queue, the rating draft, submit guards.
 *
 * No rating logic lives here beyond draft bookkeeping; lifecycle decisions
 * are the server's, and callers re-fetch after every mutation.
 */

import { ASPECTS, type Aspect, type RatingValue, type RecordWire } from './types.js';

export interface RatingDraft {
  accuracy?: RatingValue;
  relevance?: RatingValue;
  practicality?: RatingValue;
}

export interface RemovedItem {
  item: RecordWire;
  index: number;
}

export class ReviewSession {
  items: RecordWire[] = [];
  cursor = 0;
  draft: RatingDraft = {};
  focusedAspect: Aspect = 'accuracy';
  inFlight = false;

  setItems(items: RecordWire[]): void {
    this.items = items.slice();
    if (this.cursor >= this.items.length) this.cursor = Math.max(0, this.items.length - 1);
  }

  current(): RecordWire | null {
    return this.items[this.cursor] ?? null;
  }

  isEmpty(): boolean {
    return this.items.length === 0;
  }

  next(): void {
    if (this.cursor < this.items.length - 1) {
      this.cursor += 1;
      this.resetDraft();
    }
  }

  prev(): void {
    if (this.cursor > 0) {
      this.cursor -= 1;
      this.resetDraft();
    }
  }

  resetDraft(): void {
    this.draft = {};
    this.focusedAspect = 'accuracy';
  }

  setRating(aspect: Aspect, value: RatingValue): void {
    this.draft = { ...this.draft, [aspect]: value };
  }

  /** Rate the focused aspect and move focus to the next one (wrapping). */
  rateFocused(value: RatingValue): void {
    this.setRating(this.focusedAspect, value);
    const i = ASPECTS.indexOf(this.focusedAspect);
    this.focusedAspect = ASPECTS[Math.min(i + 1, ASPECTS.length - 1)];
  }

  focusAspect(step: 1 | -1): void {
    const i = ASPECTS.indexOf(this.focusedAspect);
    const n = ASPECTS.length;
    this.focusedAspect = ASPECTS[(i + step + n) % n];
  }

  isComplete(): boolean {
    return ASPECTS.every((a) => this.draft[a] !== undefined);
  }

  completeDraft(): Record<Aspect, RatingValue> | null {
    if (!this.isComplete()) return null;
    return {
      accuracy: this.draft.accuracy!,
      relevance: this.draft.relevance!,
      practicality: this.draft.practicality!,
    };
  }

  /** Optimistically drop the current item; the handle restores it on failure. */
  removeCurrent(): RemovedItem | null {
    const item = this.current();
    if (!item) return null;
    const index = this.cursor;
    this.items = this.items.filter((_, i) => i !== index);
    if (this.cursor >= this.items.length) this.cursor = Math.max(0, this.items.length - 1);
    this.resetDraft();
    return { item, index };
  }

  restore(removed: RemovedItem): void {
    this.items = [
      ...this.items.slice(0, removed.index),
      removed.item,
      ...this.items.slice(removed.index),
    ];
    this.cursor = removed.index;
    this.resetDraft();
  }
}
