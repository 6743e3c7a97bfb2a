"""Random deletions and substitutions, and what they do to the score."""
import numpy as np

from lrdwm import InjectorConfig, LRInjector, Vocabulary, WatermarkKey, calibrate_null, detect
from lrdwm.attacks import apply_attack
from lrdwm.dlm_sim import MarkovSource, decode, make_schedule, train_base_model

V = 64
vocab = Vocabulary(V)
src = MarkovSource(V, seed=5)
model = train_base_model(src.sample(500, 200, 6), order=3)
cfg = InjectorConfig(WatermarkKey(0xAAAA0000BBBB1111), WatermarkKey(0xCCCC2222DDDD3333), delta=4.0)
cal = calibrate_null(src.sample(2000, 200, 7), cfg, vocab, lengths=[200, 180, 140, 100])

text = decode(model, [1, 2], make_schedule("random", 202, 2, seed=1), temperature=1.0,
              injector=LRInjector(cfg, vocab), forward_all=False).generated
print("clean Z %.2f" % detect(text, cfg, cal).z)
for kind in ("delete", "substitute"):
    for p in (0.1, 0.3, 0.5):
        z = [detect(apply_attack(kind, text, p, vocab, seed=s), cfg, cal).z for s in range(10)]
        print(f"{kind:>10} {p:.1f}: mean Z {np.mean(z):5.2f}")
