import { describe, expect, it } from "vitest";

import { Canvas2D, COCO_BONES, drawSkeleton, UPPER_BODY_JOINTS } from "../src/skeleton.js";
import { KeypointView } from "../src/state.js";

class RecordingCtx implements Canvas2D {
  ops: { op: string; alpha: number; fill: string }[] = [];
  strokeStyle = "";
  fillStyle = "";
  lineWidth = 0;
  globalAlpha = 1;

  clearRect(): void {
    this.ops.push({ op: "clear", alpha: this.globalAlpha, fill: this.fillStyle });
  }
  beginPath(): void {}
  moveTo(): void {}
  lineTo(): void {}
  stroke(): void {
    this.ops.push({ op: "stroke", alpha: this.globalAlpha, fill: this.fillStyle });
  }
  arc(): void {}
  fill(): void {
    this.ops.push({ op: "fill", alpha: this.globalAlpha, fill: this.fillStyle });
  }
}

function confidentFrame(score = 0.9): KeypointView[] {
  return Array.from({ length: 18 }, (_, i) => ({ x: i * 10, y: i * 5, score }));
}

describe("skeleton renderer", () => {
  it("draws all 18 joints and every bone for a confident frame", () => {
    const ctx = new RecordingCtx();
    drawSkeleton(ctx, confidentFrame(), { width: 640, height: 480 });
    expect(ctx.ops.filter((o) => o.op === "fill").length).toBe(18);
    expect(ctx.ops.filter((o) => o.op === "stroke").length).toBe(COCO_BONES.length);
  });

  it("dims below-threshold joints instead of hiding them", () => {
    const ctx = new RecordingCtx();
    const frame = confidentFrame();
    frame[4] = { ...frame[4], score: 0.2 }; // right wrist low confidence
    drawSkeleton(ctx, frame, { width: 640, height: 480, threshold: 0.5 });
    const fills = ctx.ops.filter((o) => o.op === "fill");
    expect(fills.length).toBe(18);
    expect(fills[4].alpha).toBeLessThan(0.5);
    expect(fills[5].alpha).toBe(1);
  });

  it("highlights the eight feature joints", () => {
    const ctx = new RecordingCtx();
    drawSkeleton(ctx, confidentFrame(), { width: 640, height: 480 });
    const fills = ctx.ops.filter((o) => o.op === "fill");
    fills.forEach((fill, index) => {
      if (UPPER_BODY_JOINTS.has(index)) {
        expect(fill.fill).toBe("#ffca28");
      } else {
        expect(fill.fill).toBe("#66bb6a");
      }
    });
  });

  it("clears and draws nothing for an empty frame", () => {
    const ctx = new RecordingCtx();
    drawSkeleton(ctx, null, { width: 640, height: 480 });
    expect(ctx.ops).toEqual([{ op: "clear", alpha: 1, fill: "" }]);
  });
});
