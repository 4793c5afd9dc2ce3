// Seeded force-directed layout for the theory graph. Pure and
// deterministic: same nodes, edges, and seed give the same coordinates.

export interface LayoutPoint {
  x: number;
  y: number;
}

export interface LayoutOptions {
  width: number;
  height: number;
  iterations: number;
  seed: number;
}

const DEFAULTS: LayoutOptions = { width: 800, height: 600, iterations: 150, seed: 42 };

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function forceLayout(
  nodeIds: string[],
  edges: [string, string][],
  options: Partial<LayoutOptions> = {},
): Map<string, LayoutPoint> {
  const opts = { ...DEFAULTS, ...options };
  const rng = mulberry32(opts.seed);
  const idx = new Map(nodeIds.map((id, i) => [id, i]));
  const n = nodeIds.length;
  const pos = nodeIds.map(() => ({
    x: opts.width * (0.2 + 0.6 * rng()),
    y: opts.height * (0.2 + 0.6 * rng()),
  }));
  if (n <= 1) {
    return new Map(nodeIds.map((id) => [id, { x: opts.width / 2, y: opts.height / 2 }]));
  }
  const links = edges
    .filter(([a, b]) => idx.has(a) && idx.has(b) && a !== b)
    .map(([a, b]) => [idx.get(a)!, idx.get(b)!] as [number, number]);

  const area = opts.width * opts.height;
  const k = Math.sqrt(area / n);
  let temperature = opts.width / 8;
  const cool = temperature / (opts.iterations + 1);

  for (let iter = 0; iter < opts.iterations; iter++) {
    const disp = pos.map(() => ({ x: 0, y: 0 }));
    for (let i = 0; i < n; i++) {
      for (let j = i + 1; j < n; j++) {
        let dx = pos[i].x - pos[j].x;
        let dy = pos[i].y - pos[j].y;
        let dist = Math.hypot(dx, dy);
        if (dist < 0.01) {
          dx = 0.01 * (rng() - 0.5);
          dy = 0.01 * (rng() - 0.5);
          dist = Math.hypot(dx, dy);
        }
        const repulse = (k * k) / dist;
        disp[i].x += (dx / dist) * repulse;
        disp[i].y += (dy / dist) * repulse;
        disp[j].x -= (dx / dist) * repulse;
        disp[j].y -= (dy / dist) * repulse;
      }
    }
    for (const [i, j] of links) {
      const dx = pos[i].x - pos[j].x;
      const dy = pos[i].y - pos[j].y;
      const dist = Math.max(0.01, Math.hypot(dx, dy));
      const attract = (dist * dist) / k;
      disp[i].x -= (dx / dist) * attract;
      disp[i].y -= (dy / dist) * attract;
      disp[j].x += (dx / dist) * attract;
      disp[j].y += (dy / dist) * attract;
    }
    for (let i = 0; i < n; i++) {
      const d = Math.max(0.01, Math.hypot(disp[i].x, disp[i].y));
      const step = Math.min(d, temperature);
      pos[i].x += (disp[i].x / d) * step;
      pos[i].y += (disp[i].y / d) * step;
      pos[i].x = Math.min(opts.width - 30, Math.max(30, pos[i].x));
      pos[i].y = Math.min(opts.height - 30, Math.max(30, pos[i].y));
    }
    temperature -= cool;
  }
  return new Map(nodeIds.map((id, i) => [id, pos[i]]));
}
