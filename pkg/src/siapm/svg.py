"""Minimal SVG line plots with optional error bars."""

from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


class Panel:
    def __init__(self, title, xlabel, ylabel, width=420, height=300):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.series = []

    def add(self, x, y, err=None, label=""):
        self.series.append((list(map(float, x)), list(map(float, y)),
                            None if err is None else list(map(float, err)), label))

    def _range(self):
        xs = [v for s in self.series for v in s[0]]
        ys = [v for s in self.series for v in s[1]]
        es = [e for s in self.series for e in (s[2] or [0.0] * len(s[1]))]
        lo = min(y - e for y, e in zip(ys, es))
        hi = max(y + e for y, e in zip(ys, es))
        if hi - lo < 1e-9:
            lo, hi = lo - 0.05, hi + 0.05
        x0, x1 = min(xs), max(xs)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        return x0, x1, lo, hi

    def render(self, ox=0):
        m = 50
        w, h = self.width - 2 * m, self.height - 2 * m
        x0, x1, y0, y1 = self._range()

        def px(x):
            return ox + m + (x - x0) / (x1 - x0) * w

        def py(y):
            return m + (1 - (y - y0) / (y1 - y0)) * h

        out = [f'<rect x="{ox + m}" y="{m}" width="{w}" height="{h}" fill="none" stroke="black"/>',
               f'<text x="{ox + self.width / 2}" y="{m - 15}" text-anchor="middle">{escape(self.title)}</text>',
               f'<text x="{ox + self.width / 2}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>',
               f'<text x="{ox + 12}" y="{self.height / 2}" transform="rotate(-90 {ox + 12} {self.height / 2})" '
               f'text-anchor="middle">{escape(self.ylabel)}</text>',
               f'<text x="{ox + m - 4}" y="{m + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>',
               f'<text x="{ox + m - 4}" y="{m + h}" text-anchor="end" font-size="10">{y0:.4g}</text>',
               f'<text x="{ox + m}" y="{m + h + 14}" font-size="10">{x0:.4g}</text>',
               f'<text x="{ox + m + w}" y="{m + h + 14}" text-anchor="end" font-size="10">{x1:.4g}</text>']
        for k, (x, y, err, label) in enumerate(self.series):
            c = COLORS[k % len(COLORS)]
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{c}" points="{pts}"/>')
            if err:
                for a, b, e in zip(x, y, err):
                    out.append(f'<line x1="{px(a):.2f}" y1="{py(b - e):.2f}" x2="{px(a):.2f}" '
                               f'y2="{py(b + e):.2f}" stroke="{c}"/>')
            if label:
                out.append(f'<text x="{ox + m + w - 4}" y="{m + 14 + 14 * k}" text-anchor="end" '
                           f'fill="{c}" font-size="11">{escape(label)}</text>')
        return "\n".join(out)


def figure(panels):
    width = sum(p.width for p in panels)
    height = max(p.height for p in panels)
    body, ox = [], 0
    for p in panels:
        body.append(p.render(ox))
        ox += p.width
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="12">\n' + "\n".join(body) + "\n</svg>\n")
