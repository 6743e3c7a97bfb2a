"""Watermark with both neighbours, calibrate on unwatermarked text, detect."""
import numpy as np

from lrdwm import InjectorConfig, LRInjector, Vocabulary, WatermarkKey, calibrate_null, detect
from lrdwm.dlm_sim import MarkovSource, decode, make_schedule, train_base_model

V = 64
vocab = Vocabulary(V)
src = MarkovSource(V, branching=6, seed=0)
model = train_base_model(src.sample(500, 120, 1), order=3)

cfg = InjectorConfig(WatermarkKey(0x1111222233334444), WatermarkKey(0x5555666677778888), delta=3.0)
cal = calibrate_null(src.sample(2000, 120, 9), cfg, vocab)
print("sigma^2 = %.3f, thresholds %s" % (cal.sigma2, {k: round(v, 2) for k, v in cal.thresholds.items()}))

prompt = src.sample(1, 4, 3)[0]
for delta in (0.0, 3.0):
    inj = LRInjector(cfg.with_delta(delta), vocab)
    zs = []
    for i in range(20):
        out = decode(model, prompt, make_schedule("random", 104, 4, seed=i), temperature=1.0,
                     injector=inj, seed=i, forward_all=False, audit=False)
        zs.append(detect(out.tokens, cfg, cal, prompt_len=4).z)
    print(f"delta={delta}: mean Z {np.mean(zs):.2f}")

human = src.sample(1, 104, 77)[0]
print(detect(human, cfg, cal, prompt_len=4).to_dict())
