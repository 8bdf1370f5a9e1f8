#include "rprobe/svg.hpp"

#include <cmath>
#include <cstdio>

namespace rprobe::svg {

std::string num(double v) {
    if (std::fabs(v) < 0.005) v = 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

namespace {

std::string stroke_attrs(const Stroke& s) {
    std::string a = " stroke=\"" + s.color + "\" stroke-width=\"" + num(s.width) + "\"";
    if (!s.dash.empty()) a += " stroke-dasharray=\"" + s.dash + "\"";
    return a;
}

}  // namespace

Document::Document(double width, double height) : width_(width), height_(height) {}

void Document::rect(double x, double y, double w, double h, const std::string& fill, const Stroke* stroke) {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"" + fill + "\"" + (stroke ? stroke_attrs(*stroke) : "") + "/>\n";
}

void Document::line(double x1, double y1, double x2, double y2, const Stroke& stroke) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) + "\"" +
             stroke_attrs(stroke) + "/>\n";
}

void Document::polyline(const std::vector<std::pair<double, double>>& points, const Stroke& stroke) {
    if (points.empty()) return;
    body_ += "<polyline fill=\"none\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (i) body_ += ' ';
        body_ += num(points[i].first) + "," + num(points[i].second);
    }
    body_ += "\"" + stroke_attrs(stroke) + "/>\n";
}

void Document::circle(double cx, double cy, double r, const std::string& fill, const Stroke* stroke) {
    body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"" +
             (stroke ? stroke_attrs(*stroke) : "") + "/>\n";
}

void Document::square(double cx, double cy, double half, const std::string& fill, const Stroke* stroke) {
    rect(cx - half, cy - half, 2 * half, 2 * half, fill, stroke);
}

void Document::text(double x, double y, const std::string& content, double size, const std::string& anchor,
                    double rotate, const std::string& fill) {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + num(size) +
             "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\" fill=\"" + fill + "\"";
    if (rotate != 0.0) body_ += " transform=\"rotate(" + num(rotate) + " " + num(x) + " " + num(y) + ")\"";
    body_ += ">" + escape(content) + "</text>\n";
}

std::string Document::str() const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           num(width_) + "\" height=\"" + num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) +
           "\">\n" + body_ + "</svg>\n";
}

}  // namespace rprobe::svg
