/** Wire types mirroring the workbench HTTP API. */

export interface ProjectInfo {
  reference: string;
  mode: "basic" | "advanced";
  streams: string[];
  model: { sites: number; branches: number };
}

export interface TreeSite {
  id: number;
  position_mm: [number, number, number];
  quat: [number, number, number, number];
  branch: number;
  arc_length_mm: number;
}

export interface TreeData {
  sites: TreeSite[];
  edges: [number, number][];
}

export interface StreamInfo {
  name: string;
  frames: number;
  fps: number;
  modality: string;
  reference: boolean;
  registered: number;
}

export interface BundleBody {
  ref_frame: number;
  site_id: number;
  substituted: boolean;
  end_of_stream: boolean;
  pose: { position_mm: number[]; quat: number[] };
  frames: Record<string, number | null>;
  site_ids: Record<string, number | null>;
}

export interface SessionInfo {
  id: string;
  mode: "basic" | "advanced";
  current: number;
  direction: 1 | -1;
  rate: number;
  playing: boolean;
}

export interface TransportResponse {
  session: SessionInfo;
  bundle: BundleBody;
}

export type TransportCommand =
  | { command: "play" }
  | { command: "pause" }
  | { command: "reverse" }
  | { command: "forward" }
  | { command: "seek"; frame: number }
  | { command: "rate"; rate: number };

export interface ApiError {
  error: { code: string; message: string };
}
