#include "gtseg/desk.hpp"

namespace gtseg::desk {

synth::DomainShift target_shift() { return synth::DomainShift{0.3, 0.8, 0.05}; }

Data make_data(int train_count, int val_count) {
  synth::SceneSpec source_spec, target_spec;
  source_spec.rng_seed = kSourceSeed;
  target_spec.rng_seed = kTargetSeed;
  Data d;
  d.source = synth::generate_domain(source_spec, synth::DomainShift{}, 0, train_count);
  d.target = synth::generate_domain(target_spec, target_shift(), 0, train_count);
  d.target_val = synth::generate_domain(target_spec, target_shift(), kValFirst, val_count);
  return d;
}

TrainConfig config(Method method, std::uint64_t seed) {
  TrainConfig c;
  c.method = method;
  c.seed = seed;
  c.total_steps = 4000;
  c.lr_encoder = 6e-4;
  c.lr_guider = 6e-4;
  c.checkpoint_interval = 0;
  c.eval_interval = 0;
  c.guider.embed_dim = 32;
  c.guider.num_heads = 4;
  c.guider.patch_size = 2;
  return c;
}

} // namespace gtseg::desk
