/** Clickable strip of training-image thumbnails driving the appearance. */

export interface GalleryCallbacks {
  onSelect: (index: number) => void;
}

export class ThumbnailGallery {
  private container: HTMLElement;
  private selected = 0;
  private buttons: HTMLButtonElement[] = [];

  constructor(container: HTMLElement, thumbnails: string[],
              private callbacks: GalleryCallbacks) {
    this.container = container;
    thumbnails.forEach((url, index) => {
      const button = document.createElement("button");
      button.className = "thumb";
      button.title = `appearance ${index}`;
      const img = document.createElement("img");
      img.src = url;
      img.alt = `training image ${index}`;
      button.appendChild(img);
      button.addEventListener("click", () => this.select(index));
      this.container.appendChild(button);
      this.buttons.push(button);
    });
    this.highlight();
  }

  select(index: number): void {
    if (index < 0 || index >= this.buttons.length) return;
    this.selected = index;
    this.highlight();
    this.callbacks.onSelect(index);
  }

  selectedIndex(): number {
    return this.selected;
  }

  private highlight(): void {
    this.buttons.forEach((b, i) => b.classList.toggle("active", i === this.selected));
  }
}
