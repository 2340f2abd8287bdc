// Canvas renderer. Draws, in order: the slice, the g / beta field layers,
// the mask, contour polylines, prompt strokes (posted, pending, active),
// and the init box. All geometry arrives in image pixel coordinates and is
// mapped through the session's view transform; nothing is computed here.

import type { Point } from "./api.js";
import type { AnnotationSession, ViewTransform } from "./session.js";
import { imageToCanvas } from "./session.js";

const CONTOUR_COLOR = "#3ee062";
const POSTED_STROKE_COLOR = "#18c8ff";
const PENDING_STROKE_COLOR = "#ffd84d";
const BOX_COLOR = "#ff9b2e";
const FIELD_ALPHA = 0.5;
const MASK_ALPHA = 0.35;
const STROKE_POINT_RADIUS = 3;

export type LayerName = "g" | "beta" | "mask";

export class SliceView {
  view: ViewTransform = { zoom: 4, panX: 0, panY: 0 };

  private slice: ImageBitmap | null = null;
  private layers: Record<LayerName, ImageBitmap | null> = {
    g: null,
    beta: null,
    mask: null,
  };
  private polylines: Point[][] = [];

  constructor(private readonly canvas: HTMLCanvasElement) {}

  setSlice(bmp: ImageBitmap | null): void {
    this.slice = bmp;
  }

  setLayer(name: LayerName, bmp: ImageBitmap | null): void {
    this.layers[name] = bmp;
  }

  setContour(polylines: Point[][]): void {
    this.polylines = polylines;
  }

  fitTo(rows: number, cols: number): void {
    const zoom = Math.max(
      1,
      Math.floor(Math.min(this.canvas.width / cols, this.canvas.height / rows)),
    );
    this.view = {
      zoom,
      panX: (this.canvas.width - cols * zoom) / 2,
      panY: (this.canvas.height - rows * zoom) / 2,
    };
  }

  panBy(dx: number, dy: number): void {
    this.view = { ...this.view, panX: this.view.panX + dx, panY: this.view.panY + dy };
  }

  zoomAt(x: number, y: number, factor: number): void {
    const zoom = Math.min(32, Math.max(0.25, this.view.zoom * factor));
    const scale = zoom / this.view.zoom;
    // keep the image point under the cursor fixed
    this.view = {
      zoom,
      panX: x - (x - this.view.panX) * scale,
      panY: y - (y - this.view.panY) * scale,
    };
  }

  render(session: AnnotationSession): void {
    const ctx = this.canvas.getContext("2d");
    if (ctx === null) return;
    const { zoom, panX, panY } = this.view;

    ctx.fillStyle = "#14171c";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.imageSmoothingEnabled = false;

    const drawLayer = (bmp: ImageBitmap, alpha: number) => {
      ctx.globalAlpha = alpha;
      ctx.drawImage(bmp, panX, panY, bmp.width * zoom, bmp.height * zoom);
      ctx.globalAlpha = 1;
    };

    if (this.slice !== null) drawLayer(this.slice, 1);
    if (session.overlays.g && this.layers.g !== null) drawLayer(this.layers.g, FIELD_ALPHA);
    if (session.overlays.beta && this.layers.beta !== null) drawLayer(this.layers.beta, FIELD_ALPHA);
    if (session.overlays.mask && this.layers.mask !== null) drawLayer(this.layers.mask, MASK_ALPHA);

    if (session.overlays.contour) {
      ctx.strokeStyle = CONTOUR_COLOR;
      ctx.lineWidth = 1.5;
      for (const poly of this.polylines) this.tracePolyline(ctx, poly, false);
    }

    this.drawStrokes(ctx, session.postedStrokes, POSTED_STROKE_COLOR);
    this.drawStrokes(ctx, session.strokeBuffer, PENDING_STROKE_COLOR);
    if (session.activeStroke.length > 0) {
      this.drawStrokes(ctx, [session.activeStroke], PENDING_STROKE_COLOR);
    }

    if (session.box !== null) {
      const [r0, c0, r1, c1] = session.box;
      const [x0, y0] = imageToCanvas([r0, c0], this.view);
      const [x1, y1] = imageToCanvas([r1, c1], this.view);
      ctx.strokeStyle = BOX_COLOR;
      ctx.lineWidth = 1.5;
      ctx.setLineDash([6, 4]);
      ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
      ctx.setLineDash([]);
    }
  }

  private tracePolyline(ctx: CanvasRenderingContext2D, points: Point[], markers: boolean): void {
    if (points.length === 0) return;
    ctx.beginPath();
    const [x0, y0] = imageToCanvas(points[0], this.view);
    ctx.moveTo(x0, y0);
    for (let i = 1; i < points.length; i++) {
      const [x, y] = imageToCanvas(points[i], this.view);
      ctx.lineTo(x, y);
    }
    ctx.stroke();
    if (markers) {
      for (const p of points) {
        const [x, y] = imageToCanvas(p, this.view);
        ctx.beginPath();
        ctx.arc(x, y, STROKE_POINT_RADIUS, 0, Math.PI * 2);
        ctx.fill();
      }
    }
  }

  private drawStrokes(ctx: CanvasRenderingContext2D, strokes: Point[][], color: string): void {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 2;
    for (const stroke of strokes) this.tracePolyline(ctx, stroke, true);
  }
}
