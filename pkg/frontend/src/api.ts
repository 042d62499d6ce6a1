/** Typed client for the prediction service; the UI's only data source. */

export interface Meta {
  bounds: Record<string, [number, number]>;
  models: { thinning: string; displacement: string };
  resolution: number;
}

export interface PredictResponse {
  thinning: string; // base64 FQT
  displacement: string; // base64 FQT
  mask: string; // base64 FQT
  summary: {
    max_thinning: number;
    mean_thinning: number;
    max_wrinkle_height_mm: number;
  };
  models: { thinning: string; displacement: string };
  latency_ms: number;
}

export interface Violation400 {
  detail: { violations: string[] };
}

export class ServiceError extends Error {
  constructor(
    message: string,
    public violations: string[] = [],
  ) {
    super(message);
  }
}

export async function fetchMeta(baseUrl: string): Promise<Meta> {
  const res = await fetch(`${baseUrl}/meta`);
  if (!res.ok) {
    throw new ServiceError(`/meta failed with ${res.status}`);
  }
  return (await res.json()) as Meta;
}

export async function fetchPrediction(
  baseUrl: string,
  params: Record<string, number>,
): Promise<PredictResponse> {
  const res = await fetch(`${baseUrl}/predict`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(params),
  });
  if (res.status === 400) {
    const body = (await res.json()) as Violation400;
    throw new ServiceError("request rejected", body.detail.violations);
  }
  if (!res.ok) {
    throw new ServiceError(`/predict failed with ${res.status}`);
  }
  return (await res.json()) as PredictResponse;
}

/** Slider field names that carry a violation, parsed from server messages. */
export function violationFields(violations: string[], known: string[]): Set<string> {
  const hit = new Set<string>();
  for (const message of violations) {
    for (const field of known) {
      if (message.includes(field)) hit.add(field);
    }
  }
  return hit;
}
