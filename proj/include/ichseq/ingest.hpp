#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ichseq/labels.hpp"
#include "ichseq/tensor.hpp"

namespace ichseq::ingest {

namespace fs = std::filesystem;

/// Stored-value to Hounsfield-unit affine map: hu = slope * raw + intercept.
struct RescaleParams {
    double slope = 1.0;
    double intercept = 0.0;

    void validate() const;
};

struct SliceRecord {
    std::string study_id;
    std::string slice_id;
    std::string raw_path;
    // Absent when the source carries no usable position; ordering then falls
    // back to instance_number and the manifest leaves the cell empty.
    std::optional<double> z_position;
    std::int64_t instance_number = 0;
    std::optional<LabelVector> labels;

    friend bool operator==(const SliceRecord&, const SliceRecord&) = default;
};

/// Stored pixel values of one slice before rescaling.
struct RawSlice {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int32_t> values;  // row-major
};

/// One study's slices in anatomical order, converted to HU.
struct HUVolume {
    std::string study_id;
    std::vector<Tensor> slices;           // each (rows, cols)
    std::vector<std::string> slice_ids;
    std::vector<double> z_positions;      // NaN where the record had none
    std::vector<std::size_t> order;       // order[k] = input index of slice k
    bool z_fallback = false;              // sorted by instance_number only

    std::size_t depth() const noexcept { return slices.size(); }
};

Tensor to_hounsfield(const RawSlice& raw, const RescaleParams& params);

/// Sort permutation: ascending z, ties by instance_number. If any record lacks
/// z, the whole study is ordered by instance_number.
std::vector<std::size_t> slice_order(const std::vector<SliceRecord>& records);

// Portable files are rescaled with `rescale`; native DICOM files use the
// slope/intercept stored in each file.
HUVolume assemble_study(const std::vector<SliceRecord>& records, const RescaleParams& rescale = {});

// ---------------------------------------------------------------------------
// Portable raw format: <slice_id>.hu16 (row-major int16 little endian) plus a
// <slice_id>.json sidecar with study_id, slice_id, z_position,
// instance_number and shape [rows, cols].

struct PortableSidecar {
    std::string study_id;
    std::string slice_id;
    std::optional<double> z_position;
    std::int64_t instance_number = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

PortableSidecar read_sidecar(const fs::path& json_path);
void write_portable_slice(const fs::path& dir, const PortableSidecar& meta,
                          const std::vector<std::int16_t>& values);
RawSlice read_portable_slice(const fs::path& hu16_path);

// Native DICOM series. Available when the library was built with GDCM.
bool dicom_supported() noexcept;
struct DicomSlice {
    SliceRecord record;  // labels unset
    RescaleParams rescale;
    RawSlice raw;
};
DicomSlice read_dicom_slice(const fs::path& path, bool with_pixels);

/// Loads the HU matrix a record points to, applying the rules of assemble_study.
Tensor load_slice_hu(const SliceRecord& record, const RescaleParams& rescale = {});

// ---------------------------------------------------------------------------
// Manifests

inline constexpr const char* kManifestHeader =
    "study_id,slice_id,raw_path,z_position,instance_number,"
    "epidural,intraparenchymal,intraventricular,subarachnoid,subdural,any";

struct Exclusion {
    std::string study_id;  // may be empty when unknown
    std::string path;
    std::string reason;
};

struct ManifestResult {
    std::vector<SliceRecord> rows;
    std::vector<Exclusion> exclusions;
    std::vector<std::string> warnings;
};

struct ManifestOptions {
    std::optional<fs::path> labels_csv;
    // Study ids dropped up front (one per line); each is reported.
    std::optional<fs::path> exclusion_list;
};

ManifestResult build_manifest(const fs::path& root, const ManifestOptions& options = {});

// Stable sort by (study_id, z, instance_number).
void sort_manifest(std::vector<SliceRecord>& rows);

void write_manifest(std::ostream& out, const std::vector<SliceRecord>& rows);
/// File variants: raw paths inside the manifest's directory are written relative
/// to it; relative paths read back are resolved against it.
void write_manifest_file(const fs::path& path, const std::vector<SliceRecord>& rows);
std::vector<SliceRecord> read_manifest(std::istream& in);
std::vector<SliceRecord> read_manifest_file(const fs::path& path);

std::string exclusion_report_json(const ManifestResult& result);

/// Groups rows by study_id, keeping first-appearance order of studies.
std::vector<std::vector<SliceRecord>> group_by_study(const std::vector<SliceRecord>& rows);

/// Reads slice labels from either the challenge long format
/// (`ID,Label` with IDs `ID_<slice>_<subtype>`) or a wide format
/// (`slice_id,<six class columns>`). Returns slice_id -> labels; slices missing
/// any class are reported in `incomplete`.
struct LabelTable {
    std::vector<std::pair<std::string, LabelVector>> labels;  // sorted by slice_id
    std::vector<std::string> incomplete;
    const LabelVector* find(const std::string& slice_id) const;
};
LabelTable read_label_csv(const fs::path& path);

}  // namespace ichseq::ingest
