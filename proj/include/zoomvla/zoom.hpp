#pragma once

// The ZOOM-IN visual tool plus the registry the reasoning loop dispatches
// through. Zoom output is a nearest-neighbor upscale so every evidence pixel
// is exactly some source pixel and sub-cell markings stay crisp.

#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "image.hpp"
#include "trace.hpp"

namespace zoomvla {

inline constexpr int kEvidenceRes = 24;

struct RegionOutOfBounds : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyRegion : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnknownTool : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ObservationPatch {
    Image pixels;         // evidence_res x evidence_res
    Region source_region;

    bool operator==(const ObservationPatch&) const = default;
};

/// Nearest-neighbor crop-and-upscale of image[x0..x1) x [y0..y1) to
/// evidence_res x evidence_res.
inline ObservationPatch zoom_in(const Image& image, const Region& region,
                                int evidence_res = kEvidenceRes) {
    if (region.x0 == region.x1 || region.y0 == region.y1) {
        throw EmptyRegion("zoom region is degenerate");
    }
    if (!(region.x0 >= 0 && region.x0 < region.x1 && region.x1 <= image.w &&
          region.y0 >= 0 && region.y0 < region.y1 && region.y1 <= image.h)) {
        throw RegionOutOfBounds("zoom region outside image bounds");
    }
    ObservationPatch patch;
    patch.source_region = region;
    patch.pixels = Image(evidence_res, evidence_res);
    const int rw = region.width();
    const int rh = region.height();
    for (int y = 0; y < evidence_res; ++y) {
        int sy = region.y0 + (y * rh) / evidence_res;
        for (int x = 0; x < evidence_res; ++x) {
            int sx = region.x0 + (x * rw) / evidence_res;
            for (int c = 0; c < 3; ++c) {
                patch.pixels.at(x, y, c) = image.at(sx, sy, c);
            }
        }
    }
    return patch;
}

/// Evidence as injected into the reasoning context: either a pixel patch or
/// the tool-error marker (fail-closed result of a bad call).
struct EvidenceResult {
    bool ok = false;
    ObservationPatch patch; // valid iff ok
};

class ToolRegistry {
public:
    using Executor = std::function<ObservationPatch(const Image&, const Region&)>;

    static ToolRegistry with_zoom(int evidence_res = kEvidenceRes) {
        ToolRegistry reg;
        reg.executors_["zoom_in"] = [evidence_res](const Image& img, const Region& r) {
            return zoom_in(img, r, evidence_res);
        };
        return reg;
    }

    bool has(const std::string& name) const { return executors_.count(name) > 0; }

    ObservationPatch execute(const std::string& name, const Image& img, const Region& r) const {
        auto it = executors_.find(name);
        if (it == executors_.end()) {
            throw UnknownTool("no such tool: " + name);
        }
        return it->second(img, r);
    }

private:
    std::map<std::string, Executor> executors_;
};

/// Executes a parsed tool call against the current observation. Never throws
/// during rollouts: any fault (unknown tool, bad region) degrades to a
/// tool-error evidence result so the episode can continue and be scored.
inline EvidenceResult execute_tool_call(const ToolRegistry& registry, const std::string& name,
                                        const Region& region, const Image& current_image) {
    EvidenceResult out;
    try {
        out.patch = registry.execute(name, current_image, region);
        out.ok = true;
    } catch (const std::runtime_error&) {
        out.ok = false;
    }
    return out;
}

} // namespace zoomvla
