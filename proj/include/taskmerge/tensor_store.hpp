// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace taskmerge {

enum class Dtype : std::uint8_t { F64, F32, F16, BF16 };

std::size_t element_size(Dtype dtype);
std::string_view dtype_name(Dtype dtype);
/// Parses a safetensors dtype tag; throws FormatError for anything outside F64/F32/F16/BF16.
Dtype parse_dtype(std::string_view tag);

using Shape = std::vector<std::uint64_t>;

/// Element count of a shape; the empty shape is a scalar.
std::uint64_t element_count(const Shape& shape);

/// Dense little-endian tensor. The byte buffer always holds exactly
/// element_count(shape) * element_size(dtype) bytes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Dtype dtype, Shape shape);
    Tensor(Dtype dtype, Shape shape, std::vector<std::byte> bytes);

    static Tensor from_values(Dtype dtype, Shape shape, std::span<const double> values);

    Dtype dtype() const { return dtype_; }
    const Shape& shape() const { return shape_; }
    std::uint64_t size() const { return element_count(shape_); }
    std::span<const std::byte> bytes() const { return bytes_; }
    std::span<std::byte> bytes() { return bytes_; }

    /// Element i widened to double. F16/BF16/F32 values are exact in double.
    double get(std::uint64_t i) const;
    /// Rounds value to the tensor dtype (nearest-even) and stores it.
    void set(std::uint64_t i, double value);
    /// Copies the raw bytes of element i from another tensor of the same dtype.
    void copy_element(std::uint64_t i, const Tensor& from);

    std::vector<double> to_doubles() const;

    bool operator==(const Tensor&) const = default;

private:
    Dtype dtype_ = Dtype::F32;
    Shape shape_;
    std::vector<std::byte> bytes_;
};

using Metadata = std::map<std::string, std::string>;

/// One model's weights. Names iterate in lexicographic byte order, which is
/// the canonical layer index order used everywhere downstream.
struct Checkpoint {
    std::map<std::string, Tensor> entries;
    std::optional<Metadata> metadata;

    bool operator==(const Checkpoint&) const = default;
};

struct LayerInfo {
    std::string name;
    Shape shape;
    Dtype dtype;
};

/// Shared layer structure of a set of checkpoints, in canonical order.
struct LayerCatalog {
    std::vector<LayerInfo> layers;

    std::size_t size() const { return layers.size(); }
    std::vector<std::string> names() const;
    std::uint64_t total_elements() const;
};

LayerCatalog catalog_of(const Checkpoint& ckpt);

/// Returns the shared catalog iff every checkpoint has the same names, shapes
/// and dtypes. Throws IncompatibleError naming the offending tensor otherwise.
LayerCatalog validate_compatibility(std::span<const Checkpoint* const> ckpts);
LayerCatalog validate_compatibility(std::span<const Checkpoint> ckpts);

/// Same as validate_compatibility but ignores dtypes (task vectors are stored
/// wider than the checkpoints they were derived from).
void require_same_layout(const LayerCatalog& catalog, const Checkpoint& other, std::string_view what);

// safetensors container ------------------------------------------------------

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes);

/// The JSON header block exactly as serialize_checkpoint emits it (padding included).
std::string serialized_header(const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Lowercase hex SHA-256 of serialized_header(ckpt).
std::string header_fingerprint(const Checkpoint& ckpt);

} // namespace taskmerge
