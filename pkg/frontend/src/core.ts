/** Viewer state machine, independent of the DOM.
 *
 * Every repaint is derived verbatim from one bundle body delivered by the
 * service (transport response or server-sent event). The client never
 * computes frame correspondence locally — which stream frame belongs to
 * which reference frame is decided exclusively on the server.
 */

import type { WorkbenchService } from "./service.js";
import type {
  BundleBody,
  ProjectInfo,
  SessionInfo,
  StreamInfo,
  TransportResponse,
} from "./types.js";

export interface Repaint {
  refFrame: number;
  siteId: number;
  cursor: number; // 0..1 along the reference timeline
  paneFrames: Record<string, number | null>;
  substituted: boolean;
  endOfStream: boolean;
  playing: boolean;
  direction: 1 | -1;
  rate: number;
  reverseEnabled: boolean;
}

export type RepaintListener = (repaint: Repaint) => void;

export class ViewerCore {
  project!: ProjectInfo;
  streams!: StreamInfo[];
  session!: SessionInfo;
  lastBundle: BundleBody | null = null;

  private refFrameCount = 1;
  private listeners: RepaintListener[] = [];

  constructor(private readonly service: WorkbenchService) {}

  async init(mode?: string): Promise<Repaint> {
    this.project = await this.service.project();
    this.streams = await this.service.streams();
    const ref = this.streams.find((s) => s.reference);
    this.refFrameCount = ref ? ref.frames : 1;
    this.session = await this.service.createSession(mode);
    const bundle = await this.service.bundle(this.session.current);
    return this.apply(this.session, bundle);
  }

  subscribe(listener: RepaintListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  get reverseEnabled(): boolean {
    return this.session.mode !== "basic";
  }

  /** SSE push entry point. */
  onServerEvent(resp: TransportResponse): Repaint {
    return this.apply(resp.session, resp.bundle);
  }

  async seek(frame: number): Promise<Repaint> {
    return this.transport({ command: "seek", frame });
  }

  async play(): Promise<Repaint> {
    return this.transport({ command: "play" });
  }

  async pause(): Promise<Repaint> {
    return this.transport({ command: "pause" });
  }

  async forward(): Promise<Repaint> {
    return this.transport({ command: "forward" });
  }

  async reverse(): Promise<Repaint> {
    if (!this.reverseEnabled) {
      throw new Error("reverse play is not available in basic mode");
    }
    return this.transport({ command: "reverse" });
  }

  async setRate(rate: number): Promise<Repaint> {
    return this.transport({ command: "rate", rate });
  }

  private async transport(
    cmd: Parameters<WorkbenchService["transport"]>[1],
  ): Promise<Repaint> {
    const resp = await this.service.transport(this.session.id, cmd);
    return this.apply(resp.session, resp.bundle);
  }

  private apply(session: SessionInfo, bundle: BundleBody): Repaint {
    this.session = session;
    this.lastBundle = bundle;
    const span = Math.max(1, this.refFrameCount - 1);
    const repaint: Repaint = {
      refFrame: bundle.ref_frame,
      siteId: bundle.site_id,
      cursor: bundle.ref_frame / span,
      paneFrames: { ...bundle.frames },
      substituted: bundle.substituted,
      endOfStream: bundle.end_of_stream,
      playing: session.playing,
      direction: session.direction,
      rate: session.rate,
      reverseEnabled: this.reverseEnabled,
    };
    for (const listener of this.listeners) {
      listener(repaint);
    }
    return repaint;
  }
}
