#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsr/types.hpp"

namespace gsr {

// --- Atomic file writing -------------------------------------------------
// All writers stage to "<path>.partial" and rename on success, so an
// interrupted command never leaves a complete-looking file behind.
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
std::vector<std::uint8_t> read_file(const std::string& path);

// --- Scene container (magic "GSPL") --------------------------------------
// u32 version, u64 N, f32 scene_extent, N records of 14 f32
// (position 3, log_scale 3, quaternion wxyz 4, color 3, opacity_logit 1),
// then an optional feature block: u32 feat_dim + N*feat_dim f32.
void save_scene(const std::string& path, const GaussianScene& scene);
GaussianScene load_scene(const std::string& path);

// --- Camera list (JSON array) ---------------------------------------------
// Fields per camera: fx, fy, cx, cy, width, height, world_to_cam (3x4
// row-major). Rotations are validated to 1e-5 and re-orthonormalized.
void save_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> load_cameras(const std::string& path);

// --- Raw depth map (magic "DPTH") ------------------------------------------
// u32 width, u32 height, then H*W f32 row-major.
void save_depth(const std::string& path, const Image& depth);
Image load_depth(const std::string& path);

// --- Tensor container ------------------------------------------------------
// u32 JSON header length, JSON header, then raw little-endian f32 blocks in
// manifest order. Shared by head checkpoints and loaded feature extractors.
struct TensorBlock {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }
};

struct TensorFile {
    int format_version = 1;
    std::string meta_json; // extra metadata, serialized JSON object ("{}" if none)
    std::vector<TensorBlock> tensors;

    const TensorBlock& find(const std::string& name) const;
    bool has(const std::string& name) const;
};

void save_tensor_file(const std::string& path, const TensorFile& tf);
TensorFile load_tensor_file(const std::string& path);

// --- PNG (8-bit RGB) --------------------------------------------------------
void write_png_rgb8(const std::string& path, const Image& image);
Image read_png_rgb8(const std::string& path);

} // namespace gsr
