#include "casnet/visualize.hpp"

#include <algorithm>
#include <filesystem>

#include "casnet/pnm.hpp"
#include "casnet/tape.hpp"

namespace casnet {

std::vector<std::string> export_attention_maps(SharingNetwork& net,
                                               const std::vector<Sample>& samples,
                                               const std::string& out_dir) {
    const bool any = std::any_of(net.cfg.insertion_mask.begin(), net.cfg.insertion_mask.end(),
                                 [](bool b) { return b; });
    if (net.cfg.sharing != SharingKind::CAS || !any)
        throw ConfigError("export_attention_maps: network has no co-attentive modules");

    std::vector<int> stage_of;  // map index -> 1-based stage number
    for (size_t i = 0; i < net.cfg.insertion_mask.size(); ++i)
        if (net.cfg.insertion_mask[i]) stage_of.push_back(static_cast<int>(i) + 1);

    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    for (const Sample& s : samples) {
        Tape tape(false);
        const ForwardResult r = net.forward(tape, s.image);
        for (size_t m = 0; m < r.maps.size(); ++m) {
            const Tensor upscaled_a =
                resize_nearest(r.maps[m].first, s.image.shape().h, s.image.shape().w);
            const Tensor upscaled_b =
                resize_nearest(r.maps[m].second, s.image.shape().h, s.image.shape().w);
            const std::string stem =
                out_dir + "/" + s.id + "_stage" + std::to_string(stage_of[m]) + "_task";
            write_pgm(stem + "A.pgm", upscaled_a);
            write_pgm(stem + "B.pgm", upscaled_b);
            written.push_back(stem + "A.pgm");
            written.push_back(stem + "B.pgm");
        }
    }
    return written;
}

}  // namespace casnet
