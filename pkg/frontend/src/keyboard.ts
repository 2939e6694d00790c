/** Keyboard-first review flow: 1/2/3 rate the focused aspect, Enter submits. */

import type { RatingValue } from './types.js';

export type KeyAction =
  | { type: 'rate'; value: RatingValue }
  | { type: 'focus-move'; step: 1 | -1 }
  | { type: 'submit' }
  | { type: 'next-item' }
  | { type: 'prev-item' }
  | { type: 'none' };

const RATING_KEYS: Record<string, RatingValue> = {
  '1': 'Good',
  '2': 'Normal',
  '3': 'Bad',
};

export function actionForKey(key: string): KeyAction {
  if (key in RATING_KEYS) return { type: 'rate', value: RATING_KEYS[key] };
  switch (key) {
    case 'Enter':
      return { type: 'submit' };
    case 'ArrowDown':
      return { type: 'focus-move', step: 1 };
    case 'ArrowUp':
      return { type: 'focus-move', step: -1 };
    case 'n':
      return { type: 'next-item' };
    case 'p':
      return { type: 'prev-item' };
    default:
      return { type: 'none' };
  }
}
