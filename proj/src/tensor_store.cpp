// SPDX-License-Identifier: Apache-2.0
#include "taskmerge/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "taskmerge/errors.hpp"
#include "taskmerge/float_codec.hpp"

static_assert(std::endian::native == std::endian::little, "tensor buffers are little-endian");

namespace taskmerge {

using nlohmann::json;

namespace {

constexpr const char* kMetadataKey = "__metadata__";

template <typename T>
T load_as(const std::byte* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void store_as(std::byte* p, T v) {
    std::memcpy(p, &v, sizeof(T));
}

std::uint64_t checked_count(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
            throw FormatError("tensor shape overflows element count");
        }
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

} // namespace

std::size_t element_size(Dtype dtype) {
    switch (dtype) {
    case Dtype::F64:
        return 8;
    case Dtype::F32:
        return 4;
    case Dtype::F16:
    case Dtype::BF16:
        return 2;
    }
    return 0;
}

std::string_view dtype_name(Dtype dtype) {
    switch (dtype) {
    case Dtype::F64:
        return "F64";
    case Dtype::F32:
        return "F32";
    case Dtype::F16:
        return "F16";
    case Dtype::BF16:
        return "BF16";
    }
    return "?";
}

Dtype parse_dtype(std::string_view tag) {
    if (tag == "F64") return Dtype::F64;
    if (tag == "F32") return Dtype::F32;
    if (tag == "F16") return Dtype::F16;
    if (tag == "BF16") return Dtype::BF16;
    throw FormatError("unsupported dtype tag \"" + std::string(tag) + "\"");
}

std::uint64_t element_count(const Shape& shape) { return checked_count(shape); }

// Tensor ---------------------------------------------------------------------

Tensor::Tensor(Dtype dtype, Shape shape)
    : dtype_(dtype), shape_(std::move(shape)), bytes_(element_count(shape_) * element_size(dtype)) {}

Tensor::Tensor(Dtype dtype, Shape shape, std::vector<std::byte> bytes)
    : dtype_(dtype), shape_(std::move(shape)), bytes_(std::move(bytes)) {
    if (bytes_.size() != element_count(shape_) * element_size(dtype_)) {
        throw InvalidArgument("tensor buffer length " + std::to_string(bytes_.size()) +
                              " inconsistent with shape " + shape_string(shape_) + " of " +
                              std::string(dtype_name(dtype_)));
    }
}

Tensor Tensor::from_values(Dtype dtype, Shape shape, std::span<const double> values) {
    Tensor t(dtype, std::move(shape));
    if (values.size() != t.size()) {
        throw InvalidArgument("value count does not match shape");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        t.set(i, values[i]);
    }
    return t;
}

double Tensor::get(std::uint64_t i) const {
    const std::byte* p = bytes_.data() + i * element_size(dtype_);
    switch (dtype_) {
    case Dtype::F64:
        return load_as<double>(p);
    case Dtype::F32:
        return static_cast<double>(load_as<float>(p));
    case Dtype::F16:
        return half_to_double(load_as<std::uint16_t>(p));
    case Dtype::BF16:
        return bf16_to_double(load_as<std::uint16_t>(p));
    }
    return 0.0;
}

void Tensor::set(std::uint64_t i, double value) {
    std::byte* p = bytes_.data() + i * element_size(dtype_);
    switch (dtype_) {
    case Dtype::F64:
        store_as(p, value);
        break;
    case Dtype::F32:
        store_as(p, static_cast<float>(value));
        break;
    case Dtype::F16:
        store_as(p, double_to_half(value));
        break;
    case Dtype::BF16:
        store_as(p, double_to_bf16(value));
        break;
    }
}

void Tensor::copy_element(std::uint64_t i, const Tensor& from) {
    const std::size_t es = element_size(dtype_);
    std::memcpy(bytes_.data() + i * es, from.bytes_.data() + i * es, es);
}

std::vector<double> Tensor::to_doubles() const {
    std::vector<double> out(size());
    for (std::uint64_t i = 0; i < out.size(); ++i) {
        out[i] = get(i);
    }
    return out;
}

// Catalogs -------------------------------------------------------------------

std::vector<std::string> LayerCatalog::names() const {
    std::vector<std::string> out;
    out.reserve(layers.size());
    for (const auto& l : layers) {
        out.push_back(l.name);
    }
    return out;
}

std::uint64_t LayerCatalog::total_elements() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) {
        n += element_count(l.shape);
    }
    return n;
}

LayerCatalog catalog_of(const Checkpoint& ckpt) {
    LayerCatalog cat;
    cat.layers.reserve(ckpt.entries.size());
    for (const auto& [name, t] : ckpt.entries) {
        cat.layers.push_back({name, t.shape(), t.dtype()});
    }
    return cat;
}

namespace {

void compare_layout(const LayerCatalog& cat, const Checkpoint& other, std::string_view what, bool check_dtype) {
    for (const auto& layer : cat.layers) {
        auto it = other.entries.find(layer.name);
        if (it == other.entries.end()) {
            throw IncompatibleError(std::string(what) + " is missing tensor \"" + layer.name + "\"");
        }
        if (it->second.shape() != layer.shape) {
            throw IncompatibleError("shape mismatch for tensor \"" + layer.name + "\": " + shape_string(layer.shape) +
                                    " vs " + shape_string(it->second.shape()) + " in " + std::string(what));
        }
        if (check_dtype && it->second.dtype() != layer.dtype) {
            throw IncompatibleError("dtype mismatch for tensor \"" + layer.name + "\": " +
                                    std::string(dtype_name(layer.dtype)) + " vs " +
                                    std::string(dtype_name(it->second.dtype())) + " in " + std::string(what));
        }
    }
    if (other.entries.size() != cat.layers.size()) {
        for (const auto& [name, t] : other.entries) {
            const bool known = std::any_of(cat.layers.begin(), cat.layers.end(),
                                           [&](const LayerInfo& l) { return l.name == name; });
            if (!known) {
                throw IncompatibleError(std::string(what) + " has extra tensor \"" + name + "\"");
            }
        }
    }
}

} // namespace

LayerCatalog validate_compatibility(std::span<const Checkpoint* const> ckpts) {
    if (ckpts.empty()) {
        throw InvalidArgument("validate_compatibility needs at least one checkpoint");
    }
    LayerCatalog cat = catalog_of(*ckpts.front());
    for (std::size_t k = 1; k < ckpts.size(); ++k) {
        compare_layout(cat, *ckpts[k], "checkpoint #" + std::to_string(k), true);
    }
    return cat;
}

LayerCatalog validate_compatibility(std::span<const Checkpoint> ckpts) {
    std::vector<const Checkpoint*> ptrs;
    for (const auto& c : ckpts) {
        ptrs.push_back(&c);
    }
    return validate_compatibility(std::span<const Checkpoint* const>(ptrs));
}

void require_same_layout(const LayerCatalog& catalog, const Checkpoint& other, std::string_view what) {
    compare_layout(catalog, other, what, false);
}

// safetensors ----------------------------------------------------------------

std::string serialized_header(const Checkpoint& ckpt) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.entries) {
        if (name == kMetadataKey) {
            throw InvalidArgument("tensor name \"__metadata__\" is reserved");
        }
        if (t.bytes().size() != t.size() * element_size(t.dtype())) {
            throw InvalidArgument("tensor \"" + name + "\" buffer length inconsistent with shape");
        }
        const std::uint64_t end = offset + t.bytes().size();
        header[name] = {{"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}, {"data_offsets", {offset, end}}};
        offset = end;
    }
    if (ckpt.metadata) {
        header[kMetadataKey] = *ckpt.metadata;
    }
    std::string text = header.dump();
    // Pad with spaces so the data section starts 8-byte aligned.
    text.append((8 - text.size() % 8) % 8, ' ');
    return text;
}

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    const std::string header = serialized_header(ckpt);
    std::uint64_t data_size = 0;
    for (const auto& [name, t] : ckpt.entries) {
        data_size += t.bytes().size();
    }
    std::vector<std::byte> out(8 + header.size() + data_size);
    const std::uint64_t n = header.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, header.data(), header.size());
    std::byte* cursor = out.data() + 8 + header.size();
    for (const auto& [name, t] : ckpt.entries) {
        std::memcpy(cursor, t.bytes().data(), t.bytes().size());
        cursor += t.bytes().size();
    }
    return out;
}

Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes) {
    if (file_bytes.size() < 8) {
        throw FormatError("malformed header length: file shorter than 8 bytes");
    }
    std::uint64_t n = 0;
    std::memcpy(&n, file_bytes.data(), 8);
    if (n > file_bytes.size() - 8) {
        throw FormatError("malformed header length: " + std::to_string(n) + " exceeds file size");
    }
    const auto* text = reinterpret_cast<const char*>(file_bytes.data() + 8);
    json header;
    try {
        header = json::parse(text, text + n);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) {
        throw FormatError("header is not a JSON object");
    }

    const std::span<const std::byte> data = file_bytes.subspan(8 + n);
    struct Region {
        std::uint64_t begin;
        std::uint64_t end;
        std::string name;
    };
    std::vector<Region> regions;
    Checkpoint ckpt;

    for (const auto& [name, entry] : header.items()) {
        if (name == kMetadataKey) {
            if (!entry.is_object()) {
                throw FormatError("__metadata__ must be an object of strings");
            }
            Metadata meta;
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) {
                    throw FormatError("__metadata__ value for \"" + k + "\" is not a string");
                }
                meta[k] = v.get<std::string>();
            }
            ckpt.metadata = std::move(meta);
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw FormatError("tensor \"" + name + "\" lacks dtype/shape/data_offsets");
        }
        const auto& jd = entry.at("dtype");
        const auto& js = entry.at("shape");
        const auto& jo = entry.at("data_offsets");
        if (!jd.is_string()) {
            throw FormatError("tensor \"" + name + "\" has a non-string dtype");
        }
        const Dtype dtype = parse_dtype(jd.get<std::string>());
        if (!js.is_array()) {
            throw FormatError("tensor \"" + name + "\" shape is not an array");
        }
        Shape shape;
        for (const auto& d : js) {
            if (!d.is_number_unsigned()) {
                throw FormatError("tensor \"" + name + "\" has a negative or non-integer dimension");
            }
            shape.push_back(d.get<std::uint64_t>());
        }
        if (!jo.is_array() || jo.size() != 2 || !jo[0].is_number_unsigned() || !jo[1].is_number_unsigned()) {
            throw FormatError("tensor \"" + name + "\" data_offsets must be two unsigned integers");
        }
        const auto begin = jo[0].get<std::uint64_t>();
        const auto end = jo[1].get<std::uint64_t>();
        if (begin > end || end > data.size()) {
            throw FormatError("tensor \"" + name + "\" offset out of bounds");
        }
        const std::uint64_t count = checked_count(shape);
        if (count > std::numeric_limits<std::uint64_t>::max() / element_size(dtype) ||
            end - begin != count * element_size(dtype)) {
            throw FormatError("tensor \"" + name + "\" byte range does not match its shape and dtype");
        }
        std::vector<std::byte> bytes(data.begin() + static_cast<std::ptrdiff_t>(begin),
                                     data.begin() + static_cast<std::ptrdiff_t>(end));
        ckpt.entries.emplace(name, Tensor(dtype, std::move(shape), std::move(bytes)));
        regions.push_back({begin, end, name});
    }

    std::sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::uint64_t expected = 0;
    for (const auto& r : regions) {
        if (r.begin < expected) {
            throw FormatError("tensor \"" + r.name + "\" overlaps a preceding data region");
        }
        if (r.begin > expected) {
            throw FormatError("gap in data section before tensor \"" + r.name + "\"");
        }
        expected = r.end;
    }
    if (expected != data.size()) {
        throw FormatError("data section has " + std::to_string(data.size() - expected) + " unreferenced trailing bytes");
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw IoError("failed reading " + path.string());
    }
    try {
        return parse_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

std::string header_fingerprint(const Checkpoint& ckpt) {
    const std::string header = serialized_header(ckpt);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(header.data(), header.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

} // namespace taskmerge
