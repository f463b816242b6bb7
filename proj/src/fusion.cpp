// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/fusion.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace seenflow {

void DepthFrame::validate() const {
    if (width <= 0 || height <= 0 || depth.size() != static_cast<std::size_t>(width) * height)
        throw std::invalid_argument("invalid frame: bad image dimensions");
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("invalid frame: fx, fy must be positive");
    if (cx < 0 || cx > width || cy < 0 || cy > height)
        throw std::invalid_argument("invalid frame: principal point outside image");
    Mat3d rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3d::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw std::invalid_argument("invalid pose: rotation is not a proper orthonormal matrix");
}

void save_frame(const DepthFrame& frame, const std::string& path) {
    std::ofstream os = io::open_out(path);
    io::write_magic(os, "DPTH");
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(frame.width));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(frame.height));
    io::write_pod<double>(os, frame.fx);
    io::write_pod<double>(os, frame.fy);
    io::write_pod<double>(os, frame.cx);
    io::write_pod<double>(os, frame.cy);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) io::write_pod<double>(os, frame.rotation(r, c));
    for (int r = 0; r < 3; ++r) io::write_pod<double>(os, frame.translation[r]);
    io::write_array(os, frame.depth.data(), frame.depth.size());
    if (!os) throw std::runtime_error("failed writing frame: " + path);
}

DepthFrame load_frame(const std::string& path) {
    std::ifstream is = io::open_in(path);
    io::expect_magic(is, "DPTH", path);
    DepthFrame f;
    f.width = static_cast<int>(io::read_pod<std::uint32_t>(is));
    f.height = static_cast<int>(io::read_pod<std::uint32_t>(is));
    f.fx = io::read_pod<double>(is);
    f.fy = io::read_pod<double>(is);
    f.cx = io::read_pod<double>(is);
    f.cy = io::read_pod<double>(is);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f.rotation(r, c) = io::read_pod<double>(is);
    for (int r = 0; r < 3; ++r) f.translation[r] = io::read_pod<double>(is);
    f.depth.resize(static_cast<std::size_t>(f.width) * f.height);
    io::read_array(is, f.depth.data(), f.depth.size());
    return f;
}

// ---------------------------------------------------------------------------
// Procedural scenes.
// ---------------------------------------------------------------------------
Aabb OrientedBox::aabb() const {
    double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
    Vec3d h(c * half_extents.x() + s * half_extents.y(),
            s * half_extents.x() + c * half_extents.y(), half_extents.z());
    return {center - h, center + h};
}

bool OrientedBox::contains(const Vec3d& p) const {
    Vec3d d = p - center;
    double c = std::cos(yaw), s = std::sin(yaw);
    double lx = c * d.x() + s * d.y();
    double ly = -s * d.x() + c * d.y();
    return std::abs(lx) <= half_extents.x() && std::abs(ly) <= half_extents.y() &&
           std::abs(d.z()) <= half_extents.z();
}

std::vector<LayoutBox> ProceduralScene::layout_boxes() const {
    std::vector<LayoutBox> out;
    out.reserve(objects.size());
    for (const OrientedBox& o : objects) {
        Aabb hull = o.aabb();
        LayoutBox b;
        b.centroid = 0.5 * (hull.min + hull.max);
        b.size = hull.extent();
        b.label = o.label;
        out.push_back(std::move(b));
    }
    return out;
}

void save_scene(const ProceduralScene& scene, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.precision(17);
    os << "room " << scene.room.min.transpose() << " " << scene.room.max.transpose() << "\n";
    for (const OrientedBox& o : scene.objects) {
        os << "object " << o.center.transpose() << " " << o.half_extents.transpose() << " "
           << o.yaw << " " << o.label << "\n";
    }
}

ProceduralScene load_scene(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    ProceduralScene scene;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "room") {
            if (!(ss >> scene.room.min.x() >> scene.room.min.y() >> scene.room.min.z() >>
                  scene.room.max.x() >> scene.room.max.y() >> scene.room.max.z()))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad room line");
        } else if (kind == "object") {
            OrientedBox o;
            if (!(ss >> o.center.x() >> o.center.y() >> o.center.z() >> o.half_extents.x() >>
                  o.half_extents.y() >> o.half_extents.z() >> o.yaw))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad object line");
            std::getline(ss, o.label);
            o.label = normalize_label(o.label);
            scene.objects.push_back(std::move(o));
        } else {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown record '" +
                                     kind + "'");
        }
    }
    return scene;
}

void SceneSpec::validate() const {
    if (!(room_min > 0) || room_max < room_min || !(room_height > 0))
        throw std::invalid_argument("scene spec: degenerate room bounds");
    if (objects_min < 0 || objects_max < objects_min)
        throw std::invalid_argument("scene spec: bad object count range");
    if (!(object_half_min > 0) || object_half_max < object_half_min)
        throw std::invalid_argument("scene spec: bad object size range");
    if (vocabulary.empty()) throw std::invalid_argument("scene spec: empty vocabulary");
}

ProceduralScene make_scene(std::uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    Rng rng(seed);
    ProceduralScene scene;
    double w = rng.uniform(spec.room_min, spec.room_max);
    double d = rng.uniform(spec.room_min, spec.room_max);
    scene.room.min = Vec3d(0, 0, 0);
    scene.room.max = Vec3d(w, d, spec.room_height);

    int count = static_cast<int>(rng.uniform_int(spec.objects_min, spec.objects_max));
    for (int i = 0; i < count; ++i) {
        OrientedBox o;
        o.half_extents.x() = rng.uniform(spec.object_half_min, spec.object_half_max);
        o.half_extents.y() = rng.uniform(spec.object_half_min, spec.object_half_max);
        o.half_extents.z() = rng.uniform(spec.object_height_min, spec.object_height_max);
        o.yaw = rng.uniform(0.0, 2.0 * M_PI);
        Aabb hull = OrientedBox{Vec3d::Zero(), o.half_extents, o.yaw, ""}.aabb();
        double hx = std::min(hull.max.x(), 0.45 * w);
        double hy = std::min(hull.max.y(), 0.45 * d);
        o.center.x() = rng.uniform(hx, w - hx);
        o.center.y() = rng.uniform(hy, d - hy);
        o.center.z() = o.half_extents.z();  // resting on the floor
        o.label = spec.vocabulary[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(spec.vocabulary.size()) - 1))];
        scene.objects.push_back(std::move(o));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Depth rendering.
// ---------------------------------------------------------------------------
namespace {

// Ray/axis-aligned-slab intersection in a local frame; returns smallest t > 0.
bool ray_box_local(const Vec3d& o, const Vec3d& d, const Vec3d& half, double* t_hit) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (std::abs(o[a]) > half[a]) return false;
            continue;
        }
        double inv = 1.0 / d[a];
        double ta = (-half[a] - o[a]) * inv;
        double tb = (half[a] - o[a]) * inv;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (t1 < 0) return false;
    *t_hit = t0 > 0 ? t0 : t1;  // inside the box hits the exit face
    return *t_hit > 0;
}

// Room shell: floor plane plus four walls, each an inward-facing rectangle.
bool ray_room_shell(const Aabb& room, const Vec3d& o, const Vec3d& d, double* t_hit) {
    double best = std::numeric_limits<double>::infinity();
    auto consider_plane = [&](int axis, double value, int u_axis, int v_axis, double u0, double u1,
                              double v0, double v1) {
        if (std::abs(d[axis]) < 1e-15) return;
        double t = (value - o[axis]) / d[axis];
        if (t <= 1e-12 || t >= best) return;
        Vec3d p = o + t * d;
        if (p[u_axis] >= u0 - 1e-12 && p[u_axis] <= u1 + 1e-12 && p[v_axis] >= v0 - 1e-12 &&
            p[v_axis] <= v1 + 1e-12)
            best = t;
    };
    consider_plane(2, room.min.z(), 0, 1, room.min.x(), room.max.x(), room.min.y(), room.max.y());
    consider_plane(0, room.min.x(), 1, 2, room.min.y(), room.max.y(), room.min.z(), room.max.z());
    consider_plane(0, room.max.x(), 1, 2, room.min.y(), room.max.y(), room.min.z(), room.max.z());
    consider_plane(1, room.min.y(), 0, 2, room.min.x(), room.max.x(), room.min.z(), room.max.z());
    consider_plane(1, room.max.y(), 0, 2, room.min.x(), room.max.x(), room.min.z(), room.max.z());
    if (!std::isfinite(best)) return false;
    *t_hit = best;
    return true;
}

}  // namespace

double cast_ray(const ProceduralScene& scene, const Vec3d& origin, const Vec3d& dir_world,
                double max_depth) {
    double best = std::numeric_limits<double>::infinity();
    double t;
    if (ray_room_shell(scene.room, origin, dir_world, &t)) best = std::min(best, t);
    for (const OrientedBox& box : scene.objects) {
        double c = std::cos(box.yaw), s = std::sin(box.yaw);
        Vec3d od = origin - box.center;
        Vec3d lo(c * od.x() + s * od.y(), -s * od.x() + c * od.y(), od.z());
        Vec3d ld(c * dir_world.x() + s * dir_world.y(), -s * dir_world.x() + c * dir_world.y(),
                 dir_world.z());
        if (ray_box_local(lo, ld, box.half_extents, &t)) best = std::min(best, t);
    }
    if (!std::isfinite(best) || best > max_depth) return 0.0;
    return best;
}

DepthFrame render_depth(const ProceduralScene& scene, const Mat3d& rotation,
                        const Vec3d& translation, const CameraIntrinsics& intrinsics, int width,
                        int height, double max_depth) {
    DepthFrame frame;
    frame.width = width;
    frame.height = height;
    frame.fx = intrinsics.fx;
    frame.fy = intrinsics.fy;
    frame.cx = intrinsics.cx;
    frame.cy = intrinsics.cy;
    frame.rotation = rotation;
    frame.translation = translation;
    frame.depth.assign(static_cast<std::size_t>(width) * height, 0.0f);
    frame.validate();
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            Vec3d dc((u + 0.5 - intrinsics.cx) / intrinsics.fx,
                     (v + 0.5 - intrinsics.cy) / intrinsics.fy, 1.0);
            // dir has unit camera-z component, so the ray parameter is z-depth
            Vec3d dir = rotation * dc;
            double z = cast_ray(scene, translation, dir, max_depth);
            frame.depth[static_cast<std::size_t>(v) * width + u] = static_cast<float>(z);
        }
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Fusion.
// ---------------------------------------------------------------------------
void integrate_frame(SparseTsdfVolume& volume, const DepthFrame& frame) {
    frame.validate();
    const double trunc = volume.truncation();
    const double carve_range = 8.0 * trunc;
    const int edge = volume.block_edge();
    const double vs = volume.voxel_size();

    float max_depth = 0.0f;
    for (float d : frame.depth) max_depth = std::max(max_depth, d);
    if (max_depth <= 0.0f) return;  // all pixels invalid

    // Conservative world AABB of the view frustum out to max depth + band.
    double reach = max_depth + trunc;
    Vec3d lo = frame.translation, hi = frame.translation;
    const double us[2] = {-0.5, frame.width + 0.5};
    const double vcs[2] = {-0.5, frame.height + 0.5};
    for (double u : us)
        for (double v : vcs) {
            Vec3d dc((u - frame.cx) / frame.fx, (v - frame.cy) / frame.fy, 1.0);
            Vec3d p = frame.translation + reach * (frame.rotation * dc);
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }

    const Vec3i vox_lo = volume.world_to_voxel(lo);
    const Vec3i vox_hi = volume.world_to_voxel(hi);
    const Vec3i blk_lo(floor_div(vox_lo.x(), edge), floor_div(vox_lo.y(), edge),
                       floor_div(vox_lo.z(), edge));
    const Vec3i blk_hi(floor_div(vox_hi.x(), edge), floor_div(vox_hi.y(), edge),
                       floor_div(vox_hi.z(), edge));

    const Mat3d r_inv = frame.rotation.transpose();
    const double block_world = edge * vs;
    // A block is skipped when its bounding sphere cannot project into the image.
    const double block_radius = 0.5 * std::sqrt(3.0) * block_world;

    Vec3i bc;
    for (bc.x() = blk_lo.x(); bc.x() <= blk_hi.x(); ++bc.x())
        for (bc.y() = blk_lo.y(); bc.y() <= blk_hi.y(); ++bc.y())
            for (bc.z() = blk_lo.z(); bc.z() <= blk_hi.z(); ++bc.z()) {
                Vec3d block_center = volume.origin() +
                                     (bc.cast<double>() + Vec3d::Constant(0.5)) * block_world;
                Vec3d cc = r_inv * (block_center - frame.translation);
                if (cc.z() + block_radius <= 0.0) continue;
                double z_near = std::max(1e-6, cc.z() - block_radius);
                double ur = frame.fx * block_radius / z_near;
                double vr = frame.fy * block_radius / z_near;
                double u = frame.fx * cc.x() / std::max(1e-6, cc.z()) + frame.cx;
                double v = frame.fy * cc.y() / std::max(1e-6, cc.z()) + frame.cy;
                if (cc.z() - block_radius > 0.0 &&
                    (u + ur < 0 || u - ur > frame.width || v + vr < 0 || v - vr > frame.height))
                    continue;

                SparseTsdfVolume::Block* blk = nullptr;
                const Vec3i base = bc * edge;
                for (int i = 0; i < edge; ++i)
                    for (int j = 0; j < edge; ++j)
                        for (int k = 0; k < edge; ++k) {
                            Vec3i voxel = base + Vec3i(i, j, k);
                            Vec3d pc = r_inv * (volume.voxel_center(voxel) - frame.translation);
                            if (pc.z() <= 0.0) continue;
                            int pu = static_cast<int>(
                                std::floor(frame.fx * pc.x() / pc.z() + frame.cx));
                            int pv = static_cast<int>(
                                std::floor(frame.fy * pc.y() / pc.z() + frame.cy));
                            if (pu < 0 || pu >= frame.width || pv < 0 || pv >= frame.height)
                                continue;
                            float depth = frame.at(pu, pv);
                            if (depth <= 0.0f) continue;
                            double d = depth - pc.z();
                            if (d < -trunc || d > carve_range) continue;
                            if (!blk) blk = &volume.get_or_create_block(bc);
                            std::int64_t li =
                                (static_cast<std::int64_t>(i) * edge + j) * edge + k;
                            float w = blk->weight[li];
                            float prev = w > 0.0f ? blk->tsdf[li] : 0.0f;
                            float obs = static_cast<float>(std::min(trunc, d));
                            float next = (prev * w + obs) / (w + 1.0f);
                            blk->tsdf[li] = std::min(static_cast<float>(trunc),
                                                     std::max(static_cast<float>(-trunc), next));
                            blk->weight[li] = w + 1.0f;
                        }
            }
}

// ---------------------------------------------------------------------------
// Scan simulation.
// ---------------------------------------------------------------------------
Mat3d look_at_rotation(const Vec3d& eye, const Vec3d& target) {
    Vec3d f = (target - eye).normalized();
    Vec3d up(0, 0, 1);
    if (std::abs(f.dot(up)) > 0.999) throw std::invalid_argument("look_at: forward parallel to up");
    Vec3d x = f.cross(up).normalized();
    Vec3d y = f.cross(x);  // z cross x, with z = f
    Mat3d r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = f;
    return r;
}

std::vector<DepthFrame> sample_scan_frames(const ProceduralScene& scene, int n_frames,
                                           std::uint64_t seed, const ScanParams& params) {
    if (n_frames < 1) throw std::invalid_argument("sample_scan_frames: n_frames must be >= 1");
    Rng rng(seed);
    CameraIntrinsics k =
        CameraIntrinsics::from_fov(params.fov_deg, params.image_width, params.image_height);
    const Aabb& room = scene.room;
    double m = params.wall_margin;
    if (room.extent().x() <= 2 * m || room.extent().y() <= 2 * m)
        throw std::invalid_argument("sample_scan_frames: room too small for camera margin");

    std::vector<DepthFrame> frames;
    frames.reserve(static_cast<std::size_t>(n_frames));
    const int max_attempts = 200 * n_frames + 200;
    int attempts = 0;
    while (static_cast<int>(frames.size()) < n_frames) {
        if (++attempts > max_attempts)
            throw std::runtime_error("sample_scan_frames: no valid camera placement found");
        Vec3d eye(rng.uniform(room.min.x() + m, room.max.x() - m),
                  rng.uniform(room.min.y() + m, room.max.y() - m),
                  rng.uniform(params.camera_height_min,
                              std::min(params.camera_height_max, room.max.z() - 0.1)));
        bool inside_object = false;
        for (const OrientedBox& o : scene.objects)
            if (o.contains(eye)) inside_object = true;
        if (inside_object) continue;
        Vec3d target(rng.uniform(room.min.x() + 0.1, room.max.x() - 0.1),
                     rng.uniform(room.min.y() + 0.1, room.max.y() - 0.1),
                     rng.uniform(0.05, 0.8 * room.max.z()));
        Vec3d f = target - eye;
        if (f.norm() < 0.3) continue;
        if (std::abs(f.normalized().z()) > 0.95) continue;
        Mat3d rot = look_at_rotation(eye, target);
        frames.push_back(render_depth(scene, rot, eye, k, params.image_width,
                                      params.image_height, params.max_depth));
    }
    return frames;
}

std::pair<SparseTsdfVolume, std::vector<LayoutBox>> simulate_partial_scan(
    const ProceduralScene& scene, int n_frames, std::uint64_t seed, const ScanParams& params,
    double voxel_size) {
    std::vector<DepthFrame> frames = sample_scan_frames(scene, n_frames, seed, params);
    SparseTsdfVolume volume(voxel_size);
    for (const DepthFrame& f : frames) integrate_frame(volume, f);
    return {std::move(volume), scene.layout_boxes()};
}

std::vector<DepthFrame> degrade_scan(const std::vector<DepthFrame>& frames, double keep_fraction,
                                     std::uint64_t seed) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw std::invalid_argument("degrade_scan: keep_fraction must be in (0,1]");
    std::size_t n = frames.size();
    std::size_t keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n)));
    if (keep >= n) return frames;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<DepthFrame> out;
    out.reserve(keep);
    for (std::size_t idx : order) out.push_back(frames[idx]);
    return out;
}

double unknown_fraction_inside(const SparseTsdfVolume& volume, const ProceduralScene& scene) {
    const double vs = volume.voxel_size();
    Vec3i lo = volume.world_to_voxel(scene.room.min + Vec3d::Constant(vs));
    Vec3i hi = volume.world_to_voxel(scene.room.max - Vec3d::Constant(vs));
    std::int64_t unknown = 0, total = 0;
    Vec3i v;
    for (v.x() = lo.x(); v.x() <= hi.x(); ++v.x())
        for (v.y() = lo.y(); v.y() <= hi.y(); ++v.y())
            for (v.z() = lo.z(); v.z() <= hi.z(); ++v.z()) {
                ++total;
                if (classify_voxel(volume, v).cls == VoxelClass::kUnknown) ++unknown;
            }
    return total == 0 ? 1.0 : static_cast<double>(unknown) / static_cast<double>(total);
}

}  // namespace seenflow
