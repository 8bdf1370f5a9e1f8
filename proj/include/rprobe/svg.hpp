#pragma once

// Minimal SVG writer for line charts.

#include <string>
#include <utility>
#include <vector>

namespace rprobe::svg {

struct Stroke {
    std::string color = "#000000";
    double width = 1.0;
    std::string dash;  // SVG stroke-dasharray, empty = solid
};

class Document {
public:
    Document(double width, double height);

    void rect(double x, double y, double w, double h, const std::string& fill, const Stroke* stroke = nullptr);
    void line(double x1, double y1, double x2, double y2, const Stroke& stroke);
    void polyline(const std::vector<std::pair<double, double>>& points, const Stroke& stroke);
    void circle(double cx, double cy, double r, const std::string& fill, const Stroke* stroke = nullptr);
    void square(double cx, double cy, double half, const std::string& fill, const Stroke* stroke = nullptr);
    // anchor: start | middle | end
    void text(double x, double y, const std::string& content, double size, const std::string& anchor = "start",
              double rotate = 0.0, const std::string& fill = "#000000");

    std::string str() const;

private:
    double width_;
    double height_;
    std::string body_;
};

std::string escape(const std::string& s);
// Fixed two-decimal coordinates keep output byte-stable.
std::string num(double v);

}  // namespace rprobe::svg
