#ifndef KILNAUDIT_OBB_HPP
#define KILNAUDIT_OBB_HPP

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kilnaudit::obb {

/// Kiln firing technology. Indices match the label-file class column.
enum class KilnClass : int { CFCBK = 0, FCBK = 1, Zigzag = 2 };

inline constexpr std::array<KilnClass, 3> kAllClasses{KilnClass::CFCBK, KilnClass::FCBK, KilnClass::Zigzag};

std::string_view to_string(KilnClass c);
std::optional<KilnClass> class_from_string(std::string_view s);
std::optional<KilnClass> class_from_index(int index);
inline int index_of(KilnClass c) { return static_cast<int>(c); }

/// Coordinate frame a box lives in: crop pixels (y down) or EPSG:3857 meters (y up).
enum class Frame { Pixel, Mercator };

std::string_view to_string(Frame f);
// Throws ValidationError for an unknown frame name.
Frame frame_from_string(std::string_view s);

/// Rotated rectangle. `theta` is measured counterclockwise from +x to the `w` edge.
template <typename Scalar>
struct BasicOrientedBox {
    using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

    Vec2 center = Vec2::Zero();
    Scalar w = Scalar(1);
    Scalar h = Scalar(1);
    Scalar theta = Scalar(0);
    Frame frame = Frame::Pixel;

    Scalar area() const { return w * h; }
};

using OrientedBox = BasicOrientedBox<double>;

template <typename Scalar>
using Quad = Eigen::Matrix<Scalar, 2, 4>;

// Column-major vertex list with inline storage; convex clips of two quads
// never exceed 8 vertices.
template <typename Scalar>
using SmallPolygon = Eigen::Matrix<Scalar, 2, Eigen::Dynamic, Eigen::ColMajor, 2, 16>;

/// Corners in counterclockwise order starting at local (-w/2, -h/2).
template <typename Scalar>
Quad<Scalar> corners(const BasicOrientedBox<Scalar>& b)
{
    using std::cos;
    using std::sin;
    Eigen::Matrix<Scalar, 2, 2> rot;
    rot << cos(b.theta), -sin(b.theta), sin(b.theta), cos(b.theta);
    const Scalar hw = b.w / Scalar(2);
    const Scalar hh = b.h / Scalar(2);
    Quad<Scalar> local;
    local << -hw, hw, hw, -hw,
             -hh, -hh, hh, hh;
    return (rot * local).colwise() + b.center;
}

/// Shoelace signed area of a 2xN vertex matrix; positive when counterclockwise.
template <typename Derived>
typename Derived::Scalar signed_area(const Eigen::MatrixBase<Derived>& poly)
{
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = poly.cols();
    Scalar acc(0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = (i + 1) % n;
        acc += poly(0, i) * poly(1, j) - poly(0, j) * poly(1, i);
    }
    return acc / Scalar(2);
}

namespace detail {

template <typename Scalar>
Scalar cross(const Eigen::Matrix<Scalar, 2, 1>& a, const Eigen::Matrix<Scalar, 2, 1>& b)
{
    return a.x() * b.y() - a.y() * b.x();
}

template <typename Derived>
SmallPolygon<typename Derived::Scalar> as_ccw(const Eigen::MatrixBase<Derived>& poly)
{
    SmallPolygon<typename Derived::Scalar> out = poly;
    if (signed_area(out) < 0) out = out.rowwise().reverse().eval();
    return out;
}

} // namespace detail

/// Area of the intersection of two convex polygons by successive half-plane
/// clipping (Sutherland-Hodgman). Either winding order is accepted.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar convex_intersection_area(const Eigen::MatrixBase<DerivedA>& a,
                                                   const Eigen::MatrixBase<DerivedB>& b)
{
    using Scalar = typename DerivedA::Scalar;
    using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

    SmallPolygon<Scalar> subject = detail::as_ccw(a);
    const SmallPolygon<Scalar> clip = detail::as_ccw(b);

    for (Eigen::Index e = 0; e < clip.cols() && subject.cols() > 0; ++e) {
        const Vec2 p = clip.col(e);
        const Vec2 q = clip.col((e + 1) % clip.cols());
        const Vec2 edge = q - p;

        SmallPolygon<Scalar> next(2, 0);
        auto push = [&next](const Vec2& v) {
            next.conservativeResize(Eigen::NoChange, next.cols() + 1);
            next.col(next.cols() - 1) = v;
        };

        const Eigen::Index n = subject.cols();
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec2 cur = subject.col(i);
            const Vec2 prev = subject.col((i + n - 1) % n);
            const Scalar s_cur = detail::cross<Scalar>(edge, cur - p);
            const Scalar s_prev = detail::cross<Scalar>(edge, prev - p);
            if (s_cur >= 0) {
                if (s_prev < 0) push(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
                push(cur);
            } else if (s_prev >= 0) {
                push(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
            }
        }
        subject = next;
    }
    if (subject.cols() < 3) return Scalar(0);
    return std::max(Scalar(0), signed_area(subject));
}

template <typename Scalar>
Scalar obb_iou(const BasicOrientedBox<Scalar>& a, const BasicOrientedBox<Scalar>& b)
{
    const Scalar inter = convex_intersection_area(corners(a), corners(b));
    const Scalar uni = a.area() + b.area() - inter;
    if (!(uni > Scalar(0))) return Scalar(0);
    return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

/// Same box with w >= h and theta in [-pi/2, pi/2).
template <typename Scalar>
BasicOrientedBox<Scalar> canonical(BasicOrientedBox<Scalar> b)
{
    using std::floor;
    const Scalar pi = std::numbers::pi_v<Scalar>;
    auto reduce = [pi](Scalar t) {
        t -= pi * floor((t + pi / Scalar(2)) / pi);
        if (t >= pi / Scalar(2)) t -= pi;
        return t;
    };
    b.theta = reduce(b.theta);
    if (b.w < b.h) {
        std::swap(b.w, b.h);
        b.theta = reduce(b.theta + pi / Scalar(2));
    }
    return b;
}

// Throws ValidationError for non-positive or non-finite extents.
void validate(const OrientedBox& b);

struct Detection {
    OrientedBox box;
    KilnClass cls = KilnClass::FCBK;
    double confidence = 1.0;
    std::string source_crop;
    std::string id;
};

void validate(const Detection& d);

struct NmsOptions {
    double iou_threshold = 0.33;
    double conf_threshold = 0.25;
    // A physical kiln has one technology, so boxes of different classes
    // deduplicate by default.
    bool class_agnostic = true;
};

/// Greedy non-maximum suppression. Detections below the confidence threshold
/// are dropped; ties in confidence are broken by ascending id. Output is sorted
/// by confidence descending.
std::vector<Detection> nms(std::vector<Detection> detections, const NmsOptions& options = {});

/// Global deduplication of detections from overlapping crops. All boxes must be
/// in the Mercator frame. Keeps every confidence level.
std::vector<Detection> merge_cross_tile(std::vector<Detection> detections, double iou_threshold = 0.33,
                                        bool class_agnostic = true);

/// Georeference of one crop: Mercator position of its top-left pixel corner and
/// the (projected) meters per pixel.
struct CropGeoref {
    std::string crop_id;
    int size_px = 640;
    Eigen::Vector2d origin = Eigen::Vector2d::Zero();
    double meters_per_pixel = 1.0;

    static CropGeoref at_zoom(std::string crop_id, const Eigen::Vector2d& origin, int zoom, int size_px = 640);

    Eigen::Vector2d pixel_to_mercator(const Eigen::Vector2d& px) const;
    Eigen::Vector2d mercator_to_pixel(const Eigen::Vector2d& m) const;
};

/// Moves a box between the pixel frame of `georef` and Mercator meters. The
/// pixel frame is y-down, so the angle changes sign; the result is canonical.
OrientedBox reproject_box(const OrientedBox& b, Frame to, const CropGeoref& georef);

} // namespace kilnaudit::obb

#endif
