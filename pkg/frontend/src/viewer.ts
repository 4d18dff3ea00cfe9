/**
 * Wheel-zoom / drag-pan for one image pane. Labels are small; zooming in is
 * how pairs are meant to be inspected.
 */
export function attachZoomPan(container: HTMLElement, img: HTMLImageElement): void {
  let scale = 1;
  let tx = 0;
  let ty = 0;
  let dragging = false;
  let lastX = 0;
  let lastY = 0;

  const apply = () => {
    img.style.transform = `translate(${tx}px, ${ty}px) scale(${scale})`;
  };

  container.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const factor = Math.pow(1.0015, -ev.deltaY);
    const next = Math.min(10, Math.max(1, scale * factor));
    const rect = container.getBoundingClientRect();
    const cx = ev.clientX - rect.left;
    const cy = ev.clientY - rect.top;
    // keep the point under the cursor fixed while zooming
    tx = cx - ((cx - tx) / scale) * next;
    ty = cy - ((cy - ty) / scale) * next;
    scale = next;
    if (scale === 1) {
      tx = 0;
      ty = 0;
    }
    apply();
  });

  container.addEventListener("pointerdown", (ev) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    container.setPointerCapture(ev.pointerId);
  });
  container.addEventListener("pointermove", (ev) => {
    if (!dragging || scale === 1) return;
    tx += ev.clientX - lastX;
    ty += ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    apply();
  });
  container.addEventListener("pointerup", () => {
    dragging = false;
  });
  container.addEventListener("dblclick", () => {
    scale = 1;
    tx = 0;
    ty = 0;
    apply();
  });
}
