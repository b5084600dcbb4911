/** Viewer wiring: catalog, orbit controls, appearance gallery, slider. */

import { ViewerConnection, fetchSceneInfo } from "./connection.js";
import { ThumbnailGallery } from "./gallery.js";
import { Intrinsics, OrbitCamera } from "./orbit.js";
import { snapInterpolation } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export async function startViewer(baseUrl = ""): Promise<void> {
  const status = el<HTMLElement>("status");
  const frameImg = el<HTMLImageElement>("frame");
  const statsBox = el<HTMLElement>("stats");
  try {
    const info = await fetchSceneInfo(baseUrl);
    status.textContent = `${info.name}: ${info.n_gaussians} gaussians, ` +
      `${info.n_images} images`;

    const reference = info.cameras[0];
    const intrinsics: Intrinsics = {
      fx: reference.fx, fy: reference.fy, cx: reference.cx, cy: reference.cy,
      width: reference.width, height: reference.height,
    };
    const orbit = new OrbitCamera([0, 0, 0], 3.0, 0.4, 0.35);

    const wsUrl = `${baseUrl.replace(/^http/, "ws")}/ws`;
    const socket = new WebSocket(wsUrl) as unknown as
      ConstructorParameters<typeof ViewerConnection>[0];
    const connection = new ViewerConnection(
      socket,
      (frame) => {
        frameImg.src = `data:image/${frame.encoding};base64,${frame.data}`;
        statsBox.textContent = `frame ${frame.seq} | ` +
          `${frame.render_millis?.toFixed(1)} ms | ` +
          `cache ${frame.cache_hit ? "hit" : "miss"}`;
      },
      (state, detail) => {
        if (state === "error") status.textContent = `error: ${detail}`;
        if (state === "closed") status.textContent = "disconnected (reload to retry)";
      },
      (fn) => requestAnimationFrame(() => fn()),
    );

    const pushCamera = () => connection.setCamera(orbit.toCameraSpec(intrinsics));
    pushCamera();

    const gallery = new ThumbnailGallery(
      el<HTMLElement>("gallery"), info.thumbnails,
      { onSelect: (index) => connection.setAppearance(index) },
    );

    const interpA = el<HTMLSelectElement>("interp-a");
    const interpB = el<HTMLSelectElement>("interp-b");
    for (let i = 0; i < info.n_images; i++) {
      interpA.add(new Option(String(i), String(i)));
      interpB.add(new Option(String(i), String(i), false, i === 1));
    }
    const slider = el<HTMLInputElement>("interp-t");
    slider.addEventListener("input", () => {
      const t = snapInterpolation(Number(slider.value) / 256);
      connection.setInterpolation(Number(interpA.value), Number(interpB.value), t);
      el<HTMLElement>("interp-value").textContent = t.toFixed(3);
    });

    el<HTMLInputElement>("lossless").addEventListener("change", (ev) => {
      const checked = (ev.target as HTMLInputElement).checked;
      connection.setEncoding(checked ? "png" : "jpeg");
    });

    // orbit interaction on the frame area
    let dragging = false;
    let panning = false;
    let last: [number, number] = [0, 0];
    frameImg.addEventListener("mousedown", (ev) => {
      dragging = true;
      panning = ev.shiftKey || ev.button === 2;
      last = [ev.clientX, ev.clientY];
      ev.preventDefault();
    });
    window.addEventListener("mouseup", () => (dragging = false));
    window.addEventListener("mousemove", (ev) => {
      if (!dragging) return;
      const dx = ev.clientX - last[0];
      const dy = ev.clientY - last[1];
      last = [ev.clientX, ev.clientY];
      if (panning) {
        orbit.pan(-dx * 0.003 * orbit.radius, -dy * 0.003 * orbit.radius);
      } else {
        orbit.rotate(-dx * 0.008, dy * 0.008);
      }
      pushCamera();
    });
    frameImg.addEventListener("wheel", (ev) => {
      orbit.zoom(Math.exp(ev.deltaY * 0.001));
      pushCamera();
      ev.preventDefault();
    });
    frameImg.addEventListener("contextmenu", (ev) => ev.preventDefault());
    void gallery;
  } catch (err) {
    status.textContent = `cannot reach render service: ${err}`;
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => {
      retry.remove();
      void startViewer(baseUrl);
    });
    status.appendChild(document.createElement("br"));
    status.appendChild(retry);
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined" &&
    document.getElementById("frame")) {
  void startViewer("");
}
