#include "volume.hpp"

#include <algorithm>
#include <cmath>

namespace lsr::volume {

void Camera::validate() const {
    if (!(focal > 0)) throw Error(ErrorCode::Argument, "camera focal length must be positive");
    if (width <= 0 || height <= 0)
        throw Error(ErrorCode::Argument, "camera image size must be positive");
    // rotation block orthonormality
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            double dot = 0;
            for (int k = 0; k < 3; ++k) dot += pose[k * 4 + a] * pose[k * 4 + b];
            const double want = a == b ? 1.0 : 0.0;
            if (std::abs(dot - want) > 1e-6)
                throw Error(ErrorCode::Argument, "camera rotation block is not orthonormal");
        }
    }
}

RayBundle generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels) {
    RayBundle out;
    out.count = pixels.size();
    out.origins.resize(out.count * 3);
    out.directions.resize(out.count * 3);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto [px, py] = pixels[i];
        if (px < 0 || px >= cam.width || py < 0 || py >= cam.height)
            throw Error(ErrorCode::Argument, "pixel (" + std::to_string(px) + "," +
                                                 std::to_string(py) + ") outside image " +
                                                 std::to_string(cam.width) + "x" +
                                                 std::to_string(cam.height));
        // camera frame: x right, y down, z forward
        const double dc[3] = {(px - cam.cx) / cam.focal, (py - cam.cy) / cam.focal, 1.0};
        double dw[3];
        for (int r = 0; r < 3; ++r)
            dw[r] = cam.pose[r * 4 + 0] * dc[0] + cam.pose[r * 4 + 1] * dc[1] +
                    cam.pose[r * 4 + 2] * dc[2];
        const double norm = std::sqrt(dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2]);
        for (int r = 0; r < 3; ++r) {
            out.directions[i * 3 + r] = dw[r] / norm;
            out.origins[i * 3 + r] = cam.pose[r * 4 + 3];
        }
    }
    return out;
}

bool clip_to_unit_cube(const double* origin, const double* dir, double near, double far,
                       double* t_enter, double* t_exit) {
    double t0 = near, t1 = far;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-12) {
            if (origin[a] < 0.0 || origin[a] > 1.0) return false;
            continue;
        }
        double ta = (0.0 - origin[a]) / dir[a];
        double tb = (1.0 - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    if (t0 >= t1) return false;
    *t_enter = t0;
    *t_exit = t1;
    return true;
}

}  // namespace lsr::volume
