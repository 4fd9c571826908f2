/** DOM glue: renders repaints and forwards control gestures to the core. */

import type { ViewerCore, Repaint } from "./core.js";
import type { WorkbenchService } from "./service.js";
import { layoutTree, markerPosition, TreeLayout } from "./tree.js";
import type { TreeData } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

export class ViewerUI {
  private layout: TreeLayout | null = null;
  private tree: TreeData | null = null;
  private panes = new Map<string, { img: HTMLImageElement; label: HTMLElement }>();

  constructor(
    private readonly core: ViewerCore,
    private readonly service: WorkbenchService,
  ) {}

  async mount(): Promise<void> {
    const repaint = await this.core.init();
    this.tree = await this.service.tree();

    el<HTMLElement>("project-info").textContent =
      `${this.core.project.streams.length} streams - ` +
      `${this.core.project.mode} mode - ` +
      `reference ${this.core.project.reference}`;

    this.buildPanes();
    this.buildTimeline();
    this.buildTransport();
    this.core.subscribe((r) => this.render(r));
    this.render(repaint);
    this.service.events(this.core.session.id, (resp) =>
      this.core.onServerEvent(resp),
    );
  }

  private buildPanes(): void {
    const grid = el<HTMLElement>("panes");
    for (const stream of this.core.streams) {
      const cell = document.createElement("div");
      cell.className = "pane" + (stream.reference ? " reference" : "");
      const title = document.createElement("div");
      title.className = "pane-title";
      title.textContent = stream.name;
      const img = document.createElement("img");
      img.alt = stream.name;
      const label = document.createElement("div");
      label.className = "pane-frame";
      cell.append(title, img, label);
      grid.append(cell);
      this.panes.set(stream.name, { img, label });
    }
  }

  private buildTimeline(): void {
    const slider = el<HTMLInputElement>("timeline");
    const ref = this.core.streams.find((s) => s.reference);
    slider.min = "0";
    slider.max = String((ref ? ref.frames : 1) - 1);
    slider.addEventListener("input", () => {
      void this.core.seek(Number(slider.value));
    });
  }

  private buildTransport(): void {
    el<HTMLButtonElement>("btn-play").addEventListener("click", () => {
      void this.core.play();
    });
    el<HTMLButtonElement>("btn-pause").addEventListener("click", () => {
      void this.core.pause();
    });
    el<HTMLButtonElement>("btn-forward").addEventListener("click", () => {
      void this.core.forward();
    });
    const reverse = el<HTMLButtonElement>("btn-reverse");
    reverse.disabled = !this.core.reverseEnabled;
    reverse.title = this.core.reverseEnabled
      ? "play backward"
      : "reverse play is not available in basic mode";
    reverse.addEventListener("click", () => {
      if (this.core.reverseEnabled) {
        void this.core.reverse();
      }
    });
    const rate = el<HTMLSelectElement>("rate");
    rate.addEventListener("change", () => {
      void this.core.setRate(Number(rate.value));
    });
  }

  private render(repaint: Repaint): void {
    for (const [name, pane] of this.panes) {
      const frame = repaint.paneFrames[name];
      if (frame === null || frame === undefined) {
        pane.img.removeAttribute("src");
        pane.label.textContent = "no associated frame";
      } else {
        pane.img.src = this.service.frameUrl(name, frame);
        pane.label.textContent = `frame ${frame}`;
      }
    }
    el<HTMLImageElement>("vb-view").src = this.service.vbUrl(repaint.siteId);
    el<HTMLElement>("status").textContent =
      `ref ${repaint.refFrame} - site ${repaint.siteId}` +
      (repaint.substituted ? " (substituted)" : "") +
      (repaint.endOfStream ? " - end of stream" : "");
    const slider = el<HTMLInputElement>("timeline");
    slider.value = String(repaint.refFrame);
    this.drawTree(repaint.siteId);
  }

  private drawTree(siteId: number): void {
    if (!this.tree) {
      return;
    }
    const canvas = el<HTMLCanvasElement>("tree");
    const ctx = canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    if (!this.layout) {
      this.layout = layoutTree(this.tree, canvas.width, canvas.height);
    }
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = "#5b8a72";
    ctx.lineWidth = 2;
    for (const [a, b] of this.layout.edges) {
      const pa = this.layout.byId.get(a);
      const pb = this.layout.byId.get(b);
      if (!pa || !pb) {
        continue;
      }
      ctx.beginPath();
      ctx.moveTo(pa.x, pa.y);
      ctx.lineTo(pb.x, pb.y);
      ctx.stroke();
    }
    const marker = markerPosition(this.layout, siteId);
    if (marker) {
      ctx.fillStyle = "#e4572e";
      ctx.beginPath();
      ctx.arc(marker.x, marker.y, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
