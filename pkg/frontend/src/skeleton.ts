// Canvas overlay for the 18-joint skeleton stream: every joint drawn, the
// 8 upper-body feature joints highlighted, below-threshold joints dimmed.

import { KeypointView } from "./state.js";

// coco-18 bone pairs
export const COCO_BONES: [number, number][] = [
  [0, 1],
  [1, 2],
  [2, 3],
  [3, 4],
  [1, 5],
  [5, 6],
  [6, 7],
  [1, 8],
  [8, 9],
  [9, 10],
  [1, 11],
  [11, 12],
  [12, 13],
  [0, 14],
  [14, 16],
  [0, 15],
  [15, 17],
];

// feature joints: neck, shoulders, elbows, wrists, right hip
export const UPPER_BODY_JOINTS = new Set([1, 2, 3, 4, 5, 6, 7, 8]);

export interface Canvas2D {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  globalAlpha: number;
}

export interface DrawOptions {
  width: number;
  height: number;
  threshold?: number;
  sourceWidth?: number;
  sourceHeight?: number;
}

export function drawSkeleton(
  ctx: Canvas2D,
  keypoints: KeypointView[] | null,
  options: DrawOptions,
): void {
  const { width, height } = options;
  const threshold = options.threshold ?? 0.5;
  const sx = width / (options.sourceWidth ?? 640);
  const sy = height / (options.sourceHeight ?? 480);

  ctx.clearRect(0, 0, width, height);
  if (keypoints === null || keypoints.length === 0) return;

  ctx.lineWidth = 2;
  ctx.strokeStyle = "#4dd0e1";
  for (const [a, b] of COCO_BONES) {
    const ka = keypoints[a];
    const kb = keypoints[b];
    if (ka === undefined || kb === undefined) continue;
    ctx.globalAlpha = ka.score > threshold && kb.score > threshold ? 1.0 : 0.2;
    ctx.beginPath();
    ctx.moveTo(ka.x * sx, ka.y * sy);
    ctx.lineTo(kb.x * sx, kb.y * sy);
    ctx.stroke();
  }

  keypoints.forEach((kp, index) => {
    const highlighted = UPPER_BODY_JOINTS.has(index);
    ctx.globalAlpha = kp.score > threshold ? 1.0 : 0.2;
    ctx.fillStyle = highlighted ? "#ffca28" : "#66bb6a";
    ctx.beginPath();
    ctx.arc(kp.x * sx, kp.y * sy, highlighted ? 5 : 3, 0, 2 * Math.PI);
    ctx.fill();
  });
  ctx.globalAlpha = 1.0;
}
