/** HTTP access to the workbench. All pane content comes from these
 * endpoints; the client never computes frame correspondence itself. */

import type {
  BundleBody,
  ProjectInfo,
  SessionInfo,
  StreamInfo,
  TransportCommand,
  TransportResponse,
  TreeData,
} from "./types.js";

export interface WorkbenchService {
  project(): Promise<ProjectInfo>;
  tree(): Promise<TreeData>;
  streams(): Promise<StreamInfo[]>;
  bundle(refFrame: number): Promise<BundleBody>;
  createSession(mode?: string): Promise<SessionInfo>;
  transport(sessionId: string, cmd: TransportCommand): Promise<TransportResponse>;
  /** Subscribe to pushed bundles; returns an unsubscribe function. */
  events(sessionId: string, onBundle: (r: TransportResponse) => void): () => void;
  frameUrl(stream: string, frame: number): string;
  vbUrl(site: number): string;
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  const body = await res.json();
  if (!res.ok) {
    const message = body?.error?.message ?? res.statusText;
    throw new Error(`${url}: ${message}`);
  }
  return body as T;
}

async function postJson<T>(url: string, payload?: unknown): Promise<T> {
  const res = await fetch(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: payload === undefined ? undefined : JSON.stringify(payload),
  });
  const body = await res.json();
  if (!res.ok) {
    const message = body?.error?.message ?? res.statusText;
    throw new Error(`${url}: ${message}`);
  }
  return body as T;
}

export class HttpWorkbenchService implements WorkbenchService {
  constructor(private readonly base: string = "") {}

  project(): Promise<ProjectInfo> {
    return getJson(`${this.base}/api/project`);
  }

  tree(): Promise<TreeData> {
    return getJson(`${this.base}/api/tree`);
  }

  streams(): Promise<StreamInfo[]> {
    return getJson(`${this.base}/api/streams`);
  }

  bundle(refFrame: number): Promise<BundleBody> {
    return getJson(`${this.base}/api/bundle/${refFrame}`);
  }

  createSession(mode?: string): Promise<SessionInfo> {
    return postJson(`${this.base}/api/session`, mode ? { mode } : undefined);
  }

  transport(sessionId: string, cmd: TransportCommand): Promise<TransportResponse> {
    return postJson(`${this.base}/api/session/${sessionId}/transport`, cmd);
  }

  events(sessionId: string, onBundle: (r: TransportResponse) => void): () => void {
    const source = new EventSource(
      `${this.base}/api/session/${sessionId}/events`,
    );
    source.addEventListener("bundle", (ev) => {
      onBundle(JSON.parse((ev as MessageEvent).data) as TransportResponse);
    });
    return () => source.close();
  }

  frameUrl(stream: string, frame: number): string {
    return `${this.base}/api/frame/${stream}/${frame}`;
  }

  vbUrl(site: number): string {
    return `${this.base}/api/vb/${site}`;
  }
}
