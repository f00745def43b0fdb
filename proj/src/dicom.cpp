#include <cmath>

#include "ichseq/errors.hpp"
#include "ichseq/ingest.hpp"

#ifdef ICHSEQ_HAVE_GDCM
#include <gdcmAttribute.h>
#include <gdcmImage.h>
#include <gdcmImageReader.h>
#include <gdcmStringFilter.h>
#endif

namespace ichseq::ingest {

#ifdef ICHSEQ_HAVE_GDCM

bool dicom_supported() noexcept { return true; }

namespace {

std::string trimmed(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::string tag_string(const gdcm::File& file, const gdcm::Tag& tag) {
    const auto& ds = file.GetDataSet();
    if (!ds.FindDataElement(tag)) return {};
    gdcm::StringFilter sf;
    sf.SetFile(file);
    return trimmed(sf.ToString(tag));
}

template <typename T>
void copy_pixels(const std::vector<char>& buf, std::vector<std::int32_t>& out) {
    const auto* p = reinterpret_cast<const T*>(buf.data());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int32_t>(p[i]);
}

}  // namespace

DicomSlice read_dicom_slice(const fs::path& path, bool with_pixels) {
    gdcm::ImageReader reader;
    reader.SetFileName(path.string().c_str());
    if (!reader.Read()) throw DataError("cannot decode DICOM file " + path.string());
    const gdcm::Image& image = reader.GetImage();
    const gdcm::File& file = reader.GetFile();

    if (image.GetNumberOfDimensions() != 2 && image.GetDimension(2) != 1) {
        throw DataError("multi-frame DICOM is not supported: " + path.string());
    }
    if (image.GetPixelFormat().GetSamplesPerPixel() != 1) {
        throw DataError("DICOM slice is not single-channel: " + path.string());
    }

    DicomSlice out;
    out.record.raw_path = path.string();
    out.record.study_id = tag_string(file, gdcm::Tag(0x0020, 0x000d));
    if (out.record.study_id.empty()) throw DataError("DICOM file lacks StudyInstanceUID: " + path.string());
    out.record.slice_id = tag_string(file, gdcm::Tag(0x0008, 0x0018));
    if (out.record.slice_id.empty()) out.record.slice_id = path.stem().string();
    const std::string inst = tag_string(file, gdcm::Tag(0x0020, 0x0013));
    if (!inst.empty()) out.record.instance_number = std::stoll(inst);

    if (file.GetDataSet().FindDataElement(gdcm::Tag(0x0020, 0x0032))) {
        // Position along the slice normal (row cosine x column cosine).
        const double* o = image.GetOrigin();
        const double* d = image.GetDirectionCosines();
        const double n[3] = {d[1] * d[5] - d[2] * d[4], d[2] * d[3] - d[0] * d[5], d[0] * d[4] - d[1] * d[3]};
        const double z = o[0] * n[0] + o[1] * n[1] + o[2] * n[2];
        if (std::isfinite(z)) out.record.z_position = z;
    }

    out.rescale.slope = image.GetSlope();
    out.rescale.intercept = image.GetIntercept();

    out.raw.cols = image.GetDimension(0);
    out.raw.rows = image.GetDimension(1);
    if (with_pixels) {
        std::vector<char> buf(image.GetBufferLength());
        if (!image.GetBuffer(buf.data())) throw DataError("cannot decode pixel data of " + path.string());
        out.raw.values.resize(out.raw.rows * out.raw.cols);
        switch (image.GetPixelFormat().GetScalarType()) {
            case gdcm::PixelFormat::INT8: copy_pixels<std::int8_t>(buf, out.raw.values); break;
            case gdcm::PixelFormat::UINT8: copy_pixels<std::uint8_t>(buf, out.raw.values); break;
            case gdcm::PixelFormat::INT16: copy_pixels<std::int16_t>(buf, out.raw.values); break;
            case gdcm::PixelFormat::UINT16: copy_pixels<std::uint16_t>(buf, out.raw.values); break;
            case gdcm::PixelFormat::INT32: copy_pixels<std::int32_t>(buf, out.raw.values); break;
            default: throw DataError("unsupported DICOM pixel type in " + path.string());
        }
    }
    return out;
}

#else

bool dicom_supported() noexcept { return false; }

DicomSlice read_dicom_slice(const fs::path& path, bool) {
    throw DataError("native DICOM support was not compiled in; cannot read " + path.string());
}

#endif

}  // namespace ichseq::ingest
