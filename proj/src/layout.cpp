// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/layout.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <sstream>

namespace seenflow {

std::string normalize_label(const std::string& label) {
    std::size_t b = label.find_first_not_of(" \t\r\n");
    std::size_t e = label.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::string out = label.substr(b, e - b + 1);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

Eigen::VectorXd HashEmbeddingProvider::embed(const std::string& label) {
    std::string key = normalize_label(label);
    if (key.empty()) throw std::invalid_argument("embed_label: empty label");
    Rng rng(fnv1a64(key));
    Eigen::VectorXd v(dim_);
    for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
    double n = v.norm();
    if (n == 0.0) v[0] = n = 1.0;  // cannot happen in practice
    return v / n;
}

Eigen::VectorXd embed_label(const std::string& label, EmbeddingProvider& provider) {
    if (normalize_label(label).empty()) throw std::invalid_argument("embed_label: empty label");
    return provider.embed(label);
}

// ---------------------------------------------------------------------------
// Subprocess provider.
// ---------------------------------------------------------------------------
PipeEmbeddingProvider::PipeEmbeddingProvider(const std::string& command) {
    int to_pipe[2], from_pipe[2];
    if (pipe(to_pipe) != 0 || pipe(from_pipe) != 0)
        throw std::runtime_error("embedding provider: pipe() failed");
    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("embedding provider: fork() failed");
    if (pid == 0) {
        dup2(to_pipe[0], STDIN_FILENO);
        dup2(from_pipe[1], STDOUT_FILENO);
        close(to_pipe[0]);
        close(to_pipe[1]);
        close(from_pipe[0]);
        close(from_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(to_pipe[0]);
    close(from_pipe[1]);
    to_child_ = to_pipe[1];
    from_child_ = from_pipe[0];
    pid_ = pid;
}

PipeEmbeddingProvider::~PipeEmbeddingProvider() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ > 0) waitpid(static_cast<pid_t>(pid_), nullptr, 0);
}

static void read_exact(int fd, void* buf, std::size_t n) {
    char* p = static_cast<char*>(buf);
    while (n > 0) {
        ssize_t r = read(fd, p, n);
        if (r <= 0) throw std::runtime_error("embedding provider: short read from subprocess");
        p += r;
        n -= static_cast<std::size_t>(r);
    }
}

Eigen::VectorXd PipeEmbeddingProvider::request(const std::string& label) {
    std::string line = label + "\n";
    const char* p = line.data();
    std::size_t n = line.size();
    while (n > 0) {
        ssize_t w = write(to_child_, p, n);
        if (w <= 0) throw std::runtime_error("embedding provider: write to subprocess failed");
        p += w;
        n -= static_cast<std::size_t>(w);
    }
    std::uint32_t dim = 0;
    read_exact(from_child_, &dim, sizeof(dim));
    if (dim == 0 || dim > 65536) throw std::runtime_error("embedding provider: bad dimension");
    std::vector<float> vals(dim);
    read_exact(from_child_, vals.data(), sizeof(float) * dim);
    Eigen::VectorXd v(dim);
    for (std::uint32_t i = 0; i < dim; ++i) v[i] = vals[i];
    return v;
}

int PipeEmbeddingProvider::dimension() const {
    std::lock_guard<std::mutex> lock(mutex_);
    if (dim_ < 0) {
        auto* self = const_cast<PipeEmbeddingProvider*>(this);
        Eigen::VectorXd v = self->request("dimension probe");
        self->cache_[normalize_label("dimension probe")] = v;
        dim_ = static_cast<int>(v.size());
    }
    return dim_;
}

Eigen::VectorXd PipeEmbeddingProvider::embed(const std::string& label) {
    std::string key = normalize_label(label);
    if (key.empty()) throw std::invalid_argument("embed_label: empty label");
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Eigen::VectorXd v = request(key);
    if (dim_ < 0) dim_ = static_cast<int>(v.size());
    if (v.size() != dim_) throw std::runtime_error("embedding provider: inconsistent dimension");
    cache_.emplace(key, v);
    return v;
}

// ---------------------------------------------------------------------------
// Painting and chunk queries.
// ---------------------------------------------------------------------------
LayoutMap paint_layout(const std::vector<LayoutBox>& boxes, const LatentFrame& frame,
                       const Vec3i& shape, EmbeddingProvider& provider) {
    if ((shape.array() <= 0).any()) throw std::invalid_argument("paint_layout: bad shape");
    LayoutMap map;
    map.shape = shape;
    map.channels = provider.dimension();
    map.values = Eigen::ArrayXd::Zero(map.cells() * map.channels);
    map.null_flag = false;

    std::vector<Eigen::VectorXd> embeddings;
    embeddings.reserve(boxes.size());
    for (const LayoutBox& b : boxes) {
        if ((b.size.array() <= 0).any()) throw std::invalid_argument("paint_layout: box size must be positive");
        embeddings.push_back(embed_label(b.label, provider));
    }

    std::int64_t cell = 0;
    for (int i = 0; i < shape.x(); ++i)
        for (int j = 0; j < shape.y(); ++j)
            for (int k = 0; k < shape.z(); ++k, ++cell) {
                Vec3d c = frame.cell_center(Vec3i(i, j, k));
                Eigen::VectorXd acc = Eigen::VectorXd::Zero(map.channels);
                int hits = 0;
                for (std::size_t b = 0; b < boxes.size(); ++b) {
                    if (boxes[b].aabb().contains(c)) {
                        acc += embeddings[b];
                        ++hits;
                    }
                }
                if (hits > 0)
                    map.values.segment(cell * map.channels, map.channels) = acc / hits;
            }
    return map;
}

std::vector<LayoutBox> boxes_for_chunk(const std::vector<LayoutBox>& scene_boxes,
                                       const Aabb& chunk_bounds) {
    std::vector<LayoutBox> out;
    for (const LayoutBox& b : scene_boxes)
        if (b.aabb().intersects(chunk_bounds)) out.push_back(b);
    return out;
}

LayoutMap drop_condition(const LayoutMap& map, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("drop_condition: p must be in [0,1]");
    if (rng.uniform() < p) return LayoutMap::null_map(map.shape, map.channels);
    return map;
}

LayoutMap drop_condition(const LayoutMap& map, double p, std::uint64_t seed) {
    Rng rng(seed);
    return drop_condition(map, p, rng);
}

void save_layout(const std::vector<LayoutBox>& boxes, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.precision(17);
    for (const LayoutBox& b : boxes) {
        os << b.centroid.x() << " " << b.centroid.y() << " " << b.centroid.z() << " "
           << b.size.x() << " " << b.size.y() << " " << b.size.z() << " " << b.label << "\n";
    }
}

std::vector<LayoutBox> load_layout(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<LayoutBox> boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        LayoutBox b;
        if (!(ss >> b.centroid.x() >> b.centroid.y() >> b.centroid.z() >> b.size.x() >>
              b.size.y() >> b.size.z()))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad layout line");
        std::getline(ss, b.label);
        b.label = normalize_label(b.label);
        if (b.label.empty())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing label");
        boxes.push_back(std::move(b));
    }
    return boxes;
}

}  // namespace seenflow
