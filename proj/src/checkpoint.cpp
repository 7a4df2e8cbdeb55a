#include "zipit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "container.hpp"

namespace zipit {

using nlohmann::json;

std::string_view format_errc_name(FormatErrc code) {
    switch (code) {
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated: return "truncated payload";
    case FormatErrc::length_mismatch: return "shape/length disagreement";
    case FormatErrc::bad_header: return "malformed header";
    case FormatErrc::io: return "i/o failure";
    }
    return "?";
}

namespace container {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

uint64_t get_le(std::string_view bytes, size_t off, size_t width) {
    uint64_t v = 0;
    for (size_t i = 0; i < width; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
}

[[noreturn]] void fail(FormatErrc code, const std::string& detail) {
    throw FormatError(code, std::string(format_errc_name(code)) + ": " + detail);
}

}  // namespace

std::string encode(const char (&magic)[8], const json& header, const std::vector<const Tensor*>& tensors) {
    const std::string text = header.dump();
    std::string out(magic, magic + 8);
    put_u32(out, kContainerVersion);
    put_u64(out, text.size());
    out += text;
    size_t floats = 0;
    for (const auto* t : tensors) floats += t->size();
    out.reserve(out.size() + 4 * floats);
    for (const auto* t : tensors)
        for (float f : t->data()) {
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    return out;
}

Decoded decode_frame(std::string_view bytes, const char (&magic)[8]) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), magic, 8) != 0) fail(FormatErrc::bad_magic, "unrecognized file signature");
    if (bytes.size() < 20) fail(FormatErrc::truncated, "file ends inside the fixed header");
    const auto version = static_cast<uint32_t>(get_le(bytes, 8, 4));
    if (version != kContainerVersion)
        fail(FormatErrc::version_mismatch, "file version " + std::to_string(version) + ", expected " +
                                               std::to_string(kContainerVersion));
    const uint64_t hlen = get_le(bytes, 12, 8);
    if (hlen > bytes.size() - 20) fail(FormatErrc::truncated, "file ends inside the header");
    Decoded d;
    try {
        d.header = json::parse(bytes.substr(20, hlen));
    } catch (const json::exception& e) {
        fail(FormatErrc::bad_header, e.what());
    }
    d.payload = bytes.substr(20 + hlen);
    return d;
}

Shape shape_from_json(const json& j) {
    if (!j.is_array()) fail(FormatErrc::bad_header, "shape is not an array");
    Shape s;
    for (const auto& d : j) {
        if (!d.is_number_integer() || d.get<int64_t>() <= 0) fail(FormatErrc::length_mismatch, "non-positive dimension");
        s.push_back(d.get<int64_t>());
    }
    if (s.empty()) fail(FormatErrc::length_mismatch, "empty shape");
    return s;
}

std::vector<Tensor> read_tensors(std::string_view payload, const std::vector<TensorSpec>& specs) {
    uint64_t need = 0;
    for (const auto& s : specs) need += 4 * static_cast<uint64_t>(shape_numel(s.shape));
    if (payload.size() < need)
        fail(FormatErrc::truncated, "payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                                        std::to_string(need));
    if (payload.size() > need)
        fail(FormatErrc::length_mismatch, "payload has " + std::to_string(payload.size() - need) + " trailing bytes");
    std::vector<Tensor> out;
    out.reserve(specs.size());
    size_t off = 0;
    for (const auto& s : specs) {
        const auto n = static_cast<size_t>(shape_numel(s.shape));
        std::vector<float> data(n);
        for (size_t i = 0; i < n; ++i, off += 4) {
            const auto bits = static_cast<uint32_t>(get_le(payload, off, 4));
            std::memcpy(&data[i], &bits, 4);
        }
        out.emplace_back(s.shape, std::move(data));
    }
    return out;
}

}  // namespace container

std::string encode_checkpoint(const ModelGraph& model, const std::vector<MergeGroupsRecord>& merge_maps) {
    json nodes = json::array();
    std::vector<const Tensor*> tensors;
    for (const auto& id : model.topo_order()) {
        const LayerNode& n = model.node(id);
        json params = json::array();
        for (const auto& [name, t] : n.params) {
            params.push_back({{"name", name}, {"shape", t.shape()}});
            tensors.push_back(&t);
        }
        nodes.push_back({{"id", n.id},
                         {"kind", std::string(kind_name(n.kind))},
                         {"inputs", n.inputs},
                         {"attrs", n.attrs},
                         {"params", std::move(params)}});
    }
    json header = {{"format", "zipit.model"}, {"nodes", std::move(nodes)}, {"heads", model.heads}, {"meta", model.meta}};
    if (!merge_maps.empty()) {
        json maps = json::array();
        for (const auto& m : merge_maps)
            maps.push_back({{"point", m.point}, {"k", m.k_models}, {"n", m.width}, {"groups", m.groups}});
        header["merge_maps"] = std::move(maps);
    }
    return container::encode(kModelMagic, header, tensors);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    auto frame = container::decode_frame(bytes, kModelMagic);
    const json& h = frame.header;
    Checkpoint ck;
    std::vector<container::TensorSpec> specs;
    std::vector<std::pair<std::string, std::string>> slots;  // (node, param) per spec
    try {
        if (h.at("format") != "zipit.model") throw FormatError(FormatErrc::bad_header, "malformed header: not a model");
        for (const auto& jn : h.at("nodes")) {
            LayerNode n;
            n.id = jn.at("id").get<std::string>();
            n.kind = kind_from_name(jn.at("kind").get<std::string>());
            n.inputs = jn.at("inputs").get<std::vector<std::string>>();
            n.attrs = jn.at("attrs").get<std::map<std::string, double>>();
            for (const auto& jp : jn.at("params")) {
                specs.push_back({jp.at("name").get<std::string>(), container::shape_from_json(jp.at("shape"))});
                slots.emplace_back(n.id, specs.back().name);
            }
            ck.model.add(std::move(n));
        }
        ck.model.heads = h.at("heads").get<std::vector<std::string>>();
        ck.model.meta = h.at("meta").get<std::map<std::string, std::string>>();
        if (h.contains("merge_maps"))
            for (const auto& jm : h.at("merge_maps"))
                ck.merge_maps.push_back({jm.at("point").get<std::string>(), jm.at("k").get<int64_t>(),
                                         jm.at("n").get<int64_t>(),
                                         jm.at("groups").get<std::vector<std::vector<int64_t>>>()});
    } catch (const json::exception& e) {
        throw FormatError(FormatErrc::bad_header, std::string("malformed header: ") + e.what());
    } catch (const TopologyError& e) {
        throw FormatError(FormatErrc::bad_header, std::string("malformed header: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(FormatErrc::bad_header, std::string("malformed header: ") + e.what());
    }
    auto tensors = container::read_tensors(frame.payload, specs);
    for (size_t i = 0; i < tensors.size(); ++i)
        ck.model.node(slots[i].first).params.emplace(slots[i].second, std::move(tensors[i]));
    try {
        ck.model.validate();
    } catch (const ShapeError& e) {
        throw FormatError(FormatErrc::length_mismatch, std::string("shape/length disagreement: ") + e.what());
    } catch (const TopologyError& e) {
        throw FormatError(FormatErrc::bad_header, std::string("malformed header: ") + e.what());
    }
    return ck;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrc::io, "cannot open '" + path.string() + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrc::io, "short write to '" + path.string() + "'");
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path,
                     const std::vector<MergeGroupsRecord>& merge_maps) {
    model.validate();
    write_file_bytes(path, encode_checkpoint(model, merge_maps));
}

ModelGraph load_checkpoint(const std::filesystem::path& path) {
    return load_checkpoint_with_maps(path).model;
}

Checkpoint load_checkpoint_with_maps(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

}  // namespace zipit
