// Typed client for the session service (API v1).

import type { Runs } from "./rle.js";

export interface VolumeInfo {
  volume_id: string;
  dims: [number, number, number];
  spacing: [number, number, number];
}

export interface PointJson {
  row: number;
  col: number;
  label: "positive" | "negative";
}

export interface PromptJson {
  box?: [number, number, number, number];
  points?: PointJson[];
  mask?: { shape: [number, number]; runs: Runs };
}

export interface MutationResponse {
  revision: number;
  summary?: { foreground_voxels: number; nonempty_slices: number; dice3d?: number };
}

export interface MaskResponse {
  revision: number;
  shape: [number, number, number];
  rle: Runs[];
}

export interface AlternativesResponse {
  revision: number;
  slice: number;
  shape: [number, number];
  alternatives: Runs[];
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class VolsegClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<{ status: string; api_version: number }> {
    return parseOrThrow(await fetch(this.url("/health")));
  }

  async uploadVolume(bytes: ArrayBuffer | Uint8Array): Promise<VolumeInfo> {
    const resp = await fetch(this.url("/volumes"), {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: bytes as BodyInit,
    });
    return parseOrThrow(resp);
  }

  async uploadLabels(volumeId: string, bytes: ArrayBuffer | Uint8Array): Promise<{ class_ids: number[] }> {
    const resp = await fetch(this.url(`/volumes/${volumeId}/labels`), {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: bytes as BodyInit,
    });
    return parseOrThrow(resp);
  }

  sliceUrl(volumeId: string, k: number, window?: { lo: number; hi: number }): string {
    const query = window ? `?window=${window.lo},${window.hi}` : "";
    return this.url(`/volumes/${volumeId}/slices/${k}${query}`);
  }

  async createSession(
    volumeId: string,
    boundaries: [number, number],
    mode: "mask" | "bbox" = "mask",
    labelClass?: number,
  ): Promise<{ session_id: string; revision: number }> {
    const body: Record<string, unknown> = { volume_id: volumeId, boundaries, mode };
    if (labelClass !== undefined) body.label_class = labelClass;
    const resp = await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return parseOrThrow(resp);
  }

  private async mutate(path: string, body: unknown, ifMatch?: number): Promise<MutationResponse> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (ifMatch !== undefined) headers["If-Match"] = String(ifMatch);
    const resp = await fetch(this.url(path), {
      method: "POST",
      headers,
      body: JSON.stringify(body),
    });
    return parseOrThrow(resp);
  }

  async prompt(sessionId: string, slice: number, prompt: PromptJson, ifMatch?: number) {
    return this.mutate(`/sessions/${sessionId}/prompt`, { slice, prompt }, ifMatch);
  }

  async edit(sessionId: string, slice: number, point: PointJson, ifMatch?: number) {
    return this.mutate(`/sessions/${sessionId}/edit`, { slice, point }, ifMatch);
  }

  async select(sessionId: string, slice: number, maskIndex: number, ifMatch?: number) {
    return this.mutate(`/sessions/${sessionId}/select`, { slice, mask_index: maskIndex }, ifMatch);
  }

  async mask(sessionId: string): Promise<MaskResponse> {
    return parseOrThrow(await fetch(this.url(`/sessions/${sessionId}/mask`)));
  }

  async alternatives(sessionId: string, slice: number): Promise<AlternativesResponse> {
    return parseOrThrow(
      await fetch(this.url(`/sessions/${sessionId}/alternatives?slice=${slice}`)),
    );
  }
}
