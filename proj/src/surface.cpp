// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/surface.hpp"

#include <array>
#include <sstream>
#include <unordered_map>

namespace seenflow {

namespace {

// Corner offsets and edge endpoints matching the case tables.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeVert[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                  {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct QuantKey {
    std::int64_t x, y, z;
    bool operator==(const QuantKey& o) const { return x == o.x && y == o.y && z == o.z; }
};
struct QuantKeyHash {
    std::size_t operator()(const QuantKey& k) const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (std::int64_t v : {k.x, k.y, k.z}) {
            h ^= static_cast<std::uint64_t>(v);
            h *= 0x100000001B3ull;
        }
        return static_cast<std::size_t>(h);
    }
};

class MeshBuilder {
public:
    int add_vertex(const Vec3d& p) {
        QuantKey key{static_cast<std::int64_t>(std::llround(p.x() * 1e9)),
                     static_cast<std::int64_t>(std::llround(p.y() * 1e9)),
                     static_cast<std::int64_t>(std::llround(p.z() * 1e9))};
        auto it = index_.find(key);
        if (it != index_.end()) return it->second;
        int id = static_cast<int>(mesh_.vertices.size());
        mesh_.vertices.push_back(p);
        index_.emplace(key, id);
        return id;
    }

    void add_triangle(int a, int b, int c) {
        if (a == b || b == c || a == c) return;
        const Vec3d& va = mesh_.vertices[static_cast<std::size_t>(a)];
        const Vec3d& vb = mesh_.vertices[static_cast<std::size_t>(b)];
        const Vec3d& vc = mesh_.vertices[static_cast<std::size_t>(c)];
        if (triangle_area(va, vb, vc) <= 1e-12) return;
        mesh_.triangles.emplace_back(a, b, c);
    }

    Mesh take() { return std::move(mesh_); }

private:
    Mesh mesh_;
    std::unordered_map<QuantKey, int, QuantKeyHash> index_;
};

void polygonize_block(const DenseTsdfBlock& block, double voxel_size, double iso,
                      const Vec3d& world_origin, MeshBuilder& builder) {
    const Vec3i s = block.shape;
    auto world_pos = [&](int i, int j, int k) -> Vec3d {
        // samples live at voxel centers
        return world_origin + (block.origin.cast<double>() + Vec3d(i + 0.5, j + 0.5, k + 0.5)) *
                                  voxel_size;
    };
    for (int i = 0; i + 1 < s.x(); ++i)
        for (int j = 0; j + 1 < s.y(); ++j)
            for (int k = 0; k + 1 < s.z(); ++k) {
                double f[8];
                Vec3d p[8];
                int cube = 0;
                bool unknown = false;
                for (int c = 0; c < 8; ++c) {
                    const int ci = i + kCorner[c][0], cj = j + kCorner[c][1],
                              ck = k + kCorner[c][2];
                    const std::int64_t li = block.index(ci, cj, ck);
                    if (block.mask[static_cast<std::size_t>(li)] == VoxelClass::kUnknown) {
                        unknown = true;
                        break;
                    }
                    f[c] = block.tsdf[static_cast<std::size_t>(li)];
                    p[c] = world_pos(ci, cj, ck);
                    if (f[c] < iso) cube |= 1 << c;
                }
                if (unknown) continue;
                const int edges = detail::kMcEdgeTable[cube];
                if (edges == 0) continue;
                int edge_vertex[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1 << e))) continue;
                    const int a = kEdgeVert[e][0], b = kEdgeVert[e][1];
                    const double da = f[a] - iso, db = f[b] - iso;
                    double lambda = (db - da) != 0.0 ? da / (da - db) : 0.5;
                    lambda = std::min(1.0, std::max(0.0, lambda));
                    edge_vertex[e] = builder.add_vertex(p[a] + lambda * (p[b] - p[a]));
                }
                const int* tri = detail::kMcTriTable[cube];
                // reversed winding: outward normals point toward positive tsdf
                for (int t = 0; tri[t] != -1; t += 3)
                    builder.add_triangle(edge_vertex[tri[t]], edge_vertex[tri[t + 2]],
                                         edge_vertex[tri[t + 1]]);
            }
}

}  // namespace

double triangle_area(const Vec3d& a, const Vec3d& b, const Vec3d& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

Mesh marching_cubes(const DenseTsdfBlock& block, double voxel_size, double iso,
                    const Vec3d& world_origin) {
    for (float v : block.tsdf)
        if (!std::isfinite(v)) throw std::invalid_argument("marching_cubes: non-finite field");
    MeshBuilder builder;
    polygonize_block(block, voxel_size, iso, world_origin, builder);
    return builder.take();
}

Mesh extract_scene_mesh(const SparseTsdfVolume& volume) {
    MeshBuilder builder;
    const int edge = volume.block_edge();
    for (const auto& [bc, blk] : volume.blocks()) {
        // one-voxel apron; cells based in this block are polygonized here only
        DenseTsdfBlock dense =
            extract_dense(volume, bc * edge, Vec3i::Constant(edge + 1));
        polygonize_block(dense, volume.voxel_size(), 0.0, volume.origin(), builder);
    }
    return builder.take();
}

// ---------------------------------------------------------------------------
// Mesh IO.
// ---------------------------------------------------------------------------
void write_mesh(const Mesh& mesh, const std::string& path, MeshFormat format) {
    for (const Vec3i& t : mesh.triangles)
        if ((t.array() < 0).any() || (t.array() >= static_cast<int>(mesh.vertices.size())).any())
            throw std::invalid_argument("write_mesh: triangle index out of range");
    if (format == MeshFormat::kObj) {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        char buf[128];
        for (const Vec3d& v : mesh.vertices) {
            std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
            os << buf;
        }
        for (const Vec3i& t : mesh.triangles)
            os << "f " << t.x() + 1 << " " << t.y() + 1 << " " << t.z() + 1 << "\n";
        if (!os) throw std::runtime_error("failed writing mesh: " + path);
        return;
    }
    std::ofstream os = io::open_out(path);
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << mesh.vertices.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "element face " << mesh.triangles.size() << "\n";
    os << "property list uchar int vertex_indices\n";
    os << "end_header\n";
    for (const Vec3d& v : mesh.vertices) {
        for (int a = 0; a < 3; ++a) io::write_pod<float>(os, static_cast<float>(v[a]));
    }
    for (const Vec3i& t : mesh.triangles) {
        io::write_pod<std::uint8_t>(os, 3);
        for (int a = 0; a < 3; ++a) io::write_pod<std::int32_t>(os, t[a]);
    }
    if (!os) throw std::runtime_error("failed writing mesh: " + path);
}

namespace {

Mesh read_obj(std::istream& is, const std::string& path) {
    Mesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.rfind("v ", 0) == 0) {
            std::istringstream ss(line.substr(2));
            Vec3d v;
            if (!(ss >> v.x() >> v.y() >> v.z()))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad vertex");
            mesh.vertices.push_back(v);
        } else if (line.rfind("f ", 0) == 0) {
            std::istringstream ss(line.substr(2));
            Vec3i t;
            if (!(ss >> t.x() >> t.y() >> t.z()))
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad face");
            mesh.triangles.push_back(t - Vec3i::Ones());
        }
    }
    return mesh;
}

Mesh read_ply(std::istream& is, const std::string& path) {
    std::string line;
    std::size_t n_vertices = 0, n_faces = 0;
    while (std::getline(is, line)) {
        if (line.rfind("element vertex", 0) == 0)
            n_vertices = std::stoull(line.substr(std::string("element vertex").size()));
        else if (line.rfind("element face", 0) == 0)
            n_faces = std::stoull(line.substr(std::string("element face").size()));
        else if (line == "end_header")
            break;
    }
    Mesh mesh;
    mesh.vertices.reserve(n_vertices);
    for (std::size_t i = 0; i < n_vertices; ++i) {
        float x = io::read_pod<float>(is), y = io::read_pod<float>(is),
              z = io::read_pod<float>(is);
        mesh.vertices.emplace_back(x, y, z);
    }
    mesh.triangles.reserve(n_faces);
    for (std::size_t i = 0; i < n_faces; ++i) {
        std::uint8_t n = io::read_pod<std::uint8_t>(is);
        if (n != 3) throw std::runtime_error(path + ": non-triangle face in PLY");
        Vec3i t;
        for (int a = 0; a < 3; ++a) t[a] = io::read_pod<std::int32_t>(is);
        mesh.triangles.push_back(t);
    }
    return mesh;
}

}  // namespace

Mesh read_mesh(const std::string& path) {
    std::ifstream is = io::open_in(path);
    char head[3] = {0, 0, 0};
    is.read(head, 3);
    is.seekg(0);
    if (std::memcmp(head, "ply", 3) == 0) return read_ply(is, path);
    return read_obj(is, path);
}

}  // namespace seenflow
