#include "evmae/gradcheck_suite.hpp"

#include "evmae/rng.hpp"
#include "evmae/synthgen.hpp"

namespace evmae {

namespace {

SynthConfig toy_config(uint64_t seed) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.pattern = SpatialPattern::smooth_field;
  cfg.profiles = {
      {SourceProfile{"toy-a", 3, 1.0, 32, 32, Dtype::u8}, {2, 2}, false},
      {SourceProfile{"toy-b", 2, 1.0, 24, 24, Dtype::u16}, {3, 3}, false},
  };
  return cfg;
}

struct CaseSpec {
  std::string name;
  ModelConfig model;
  MaskSpec mask;
  std::vector<std::string> sources;
  double threshold;
};

GradCheckResult run_case(const CaseSpec& spec, uint64_t seed, double eps) {
  const SynthConfig synth = toy_config(key_mix({seed, fnv1a64(spec.name)}));
  std::vector<Region> regions;
  regions.push_back(synth_region(synth, "gc-a"));
  regions.push_back(synth_region(synth, "gc-b"));

  std::vector<SourceSpec> catalog;
  for (const SynthProfile& p : synth.profiles)
    catalog.push_back(SourceSpec{p.profile.name, p.profile.bands,
                                 compute_band_stats(regions, p.profile.name)});

  MaeModel<double> model(spec.model, catalog, key_mix({seed, fnv1a64("gc")}));
  std::vector<PreparedSample<double>> batch;
  for (size_t i = 0; i < regions.size(); ++i)
    batch.push_back(model.prepare(regions[i], spec.sources, spec.mask,
                                  key_mix({seed, static_cast<uint64_t>(i)}),
                                  /*train_mode=*/false, 0.0));
  return grad_check(model, batch, eps, 200, seed);
}

}  // namespace

std::vector<GradCheckCase> grad_check_suite(uint64_t seed, double eps) {
  ModelConfig linear;
  linear.width = 256;
  linear.encoder_depth = 0;
  linear.decoder_depth = 0;
  linear.image_size = 32;

  ModelConfig small;
  small.width = 256;
  small.encoder_depth = 2;
  small.decoder_depth = 1;
  small.image_size = 32;

  ModelConfig narrow;
  narrow.width = 160;
  narrow.encoder_depth = 1;
  narrow.decoder_depth = 1;
  narrow.heads = 2;
  narrow.decoder_width = 64;
  narrow.image_size = 32;
  narrow.norm_pix = false;

  ModelConfig deep;
  deep.width = 192;
  deep.encoder_depth = 2;
  deep.decoder_depth = 2;
  deep.decoder_width = 96;
  deep.heads = 4;  // decoder head dim 24
  deep.image_size = 32;

  const MaskSpec tube{MaskScheme::tube, 0.75, 0.75, 0.25};
  const MaskSpec random{MaskScheme::random, 0.5, 0.75, 0.25};
  const MaskSpec combined{MaskScheme::combined, 0.75, 0.5, 0.25};

  const std::vector<CaseSpec> specs = {
      {"linear-depth0", linear, tube, {"toy-a"}, 1e-7},
      {"two-source-tube", small, tube, {"toy-a", "toy-b"}, 1e-4},
      {"narrow-combined-rawpix", narrow, combined, {"toy-a", "toy-b"}, 1e-4},
      {"deep-random", deep, random, {"toy-a", "toy-b"}, 1e-4},
  };

  std::vector<GradCheckCase> out;
  for (const CaseSpec& spec : specs)
    out.push_back(
        GradCheckCase{spec.name, run_case(spec, seed, eps), spec.threshold});
  return out;
}

}  // namespace evmae
