#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "zipit/error.hpp"
#include "zipit/graph.hpp"

namespace zipit {

// Container framing shared by checkpoints (.ckpt) and datasets (.zds):
//
//   magic      8 bytes   "ZIPIT1\0\0" or "ZIPDS1\0\0"
//   version    u32 LE    1
//   hdr_len    u64 LE
//   header     hdr_len bytes of UTF-8 JSON
//   payload    float32 LE tensors, concatenated in header order
inline constexpr char kModelMagic[8] = {'Z', 'I', 'P', 'I', 'T', '1', '\0', '\0'};
inline constexpr char kDatasetMagic[8] = {'Z', 'I', 'P', 'D', 'S', '1', '\0', '\0'};
inline constexpr uint32_t kContainerVersion = 1;

enum class FormatErrc { bad_magic, version_mismatch, truncated, length_mismatch, bad_header, io };

std::string_view format_errc_name(FormatErrc code);

class FormatError : public Error {
public:
    FormatError(FormatErrc code, const std::string& what) : Error(what), code_(code) {}
    FormatErrc code() const { return code_; }

private:
    FormatErrc code_;
};

// Audit record of one merge point's feature grouping (kept with merged models).
struct MergeGroupsRecord {
    std::string point;
    int64_t k_models = 0;
    int64_t width = 0;
    std::vector<std::vector<int64_t>> groups;

    bool operator==(const MergeGroupsRecord&) const = default;
};

struct Checkpoint {
    ModelGraph model;
    std::vector<MergeGroupsRecord> merge_maps;
};

std::string encode_checkpoint(const ModelGraph& model, const std::vector<MergeGroupsRecord>& merge_maps = {});
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path,
                     const std::vector<MergeGroupsRecord>& merge_maps = {});
ModelGraph load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint_with_maps(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace zipit
