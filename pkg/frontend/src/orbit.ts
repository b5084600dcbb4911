/**
 * Orbit camera: target + radius + azimuth + elevation, world up +z.
 *
 * The pose serialization matches the service's camera convention exactly:
 * z_cam = normalize(target - eye), x_cam = normalize(z_cam x up),
 * y_cam = z_cam x x_cam (pointing down for an upright camera); rotation
 * rows are [x_cam, y_cam, z_cam] and translation is -R * eye.
 */

import { CameraSpec } from "./protocol.js";

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

const TWO_PI = Math.PI * 2;
export const ELEVATION_LIMIT = (89 * Math.PI) / 180;

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-12) throw new Error("cannot normalize a zero vector");
  return [a[0] / n, a[1] / n, a[2] / n];
}

export class OrbitCamera {
  target: Vec3;
  radius: number;
  azimuth: number;
  elevation: number;

  constructor(target: Vec3 = [0, 0, 0], radius = 3.0, azimuth = 0.0, elevation = 0.4) {
    this.target = [...target] as Vec3;
    this.radius = radius;
    this.azimuth = azimuth;
    this.elevation = elevation;
    this.clamp();
  }

  private clamp(): void {
    this.elevation = Math.min(ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, this.elevation));
    this.radius = Math.max(1e-3, this.radius);
    this.azimuth = ((this.azimuth % TWO_PI) + TWO_PI) % TWO_PI;
  }

  rotate(dAzimuth: number, dElevation: number): void {
    this.azimuth += dAzimuth;
    this.elevation += dElevation;
    this.clamp();
  }

  zoom(factor: number): void {
    this.radius *= factor;
    this.clamp();
  }

  pan(dx: number, dy: number): void {
    // move the target in the camera's image plane
    const [x, y] = this.basis();
    for (let i = 0; i < 3; i++) {
      this.target[i] += x[i] * dx + y[i] * dy;
    }
  }

  eye(): Vec3 {
    const ce = Math.cos(this.elevation);
    return [
      this.target[0] + this.radius * ce * Math.cos(this.azimuth),
      this.target[1] + this.radius * ce * Math.sin(this.azimuth),
      this.target[2] + this.radius * Math.sin(this.elevation),
    ];
  }

  private basis(): [Vec3, Vec3, Vec3] {
    const eye = this.eye();
    const z = normalize(sub(this.target, eye));
    const x = normalize(cross(z, [0, 0, 1]));
    const y = cross(z, x);
    return [x, y, z];
  }

  toCameraSpec(intrinsics: Intrinsics): CameraSpec {
    const eye = this.eye();
    const [x, y, z] = this.basis();
    // adding +0 folds any -0 into +0 so the JSON wire form round-trips
    const rotation = [...x, ...y, ...z].map((v) => v + 0);
    const translation = [
      -(x[0] * eye[0] + x[1] * eye[1] + x[2] * eye[2]) + 0,
      -(y[0] * eye[0] + y[1] * eye[1] + y[2] * eye[2]) + 0,
      -(z[0] * eye[0] + z[1] * eye[1] + z[2] * eye[2]) + 0,
    ];
    return { rotation, translation, ...intrinsics };
  }
}

export function poseDistance(a: CameraSpec, b: CameraSpec): number {
  let worst = 0;
  for (let i = 0; i < 9; i++) worst = Math.max(worst, Math.abs(a.rotation[i] - b.rotation[i]));
  for (let i = 0; i < 3; i++) worst = Math.max(worst, Math.abs(a.translation[i] - b.translation[i]));
  return worst;
}
