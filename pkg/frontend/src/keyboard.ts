/** Arrow-key shortcuts mirroring the option buttons: left = A, right = B. */

import { Choice } from "./api.js";

export function bindArrowKeys(target: EventTarget, onChoice: (choice: Choice) => void): () => void {
  const handler = (event: Event) => {
    const key = (event as KeyboardEvent).key;
    if (key === "ArrowLeft") {
      event.preventDefault();
      onChoice("A");
    } else if (key === "ArrowRight") {
      event.preventDefault();
      onChoice("B");
    }
  };
  target.addEventListener("keydown", handler);
  return () => target.removeEventListener("keydown", handler);
}
