"""A small n-gram 'diffusion' decoder: positions are unmasked in a random
order, each predicted from whatever neighbours are already revealed."""
import numpy as np

from lrdwm.dlm_sim import MarkovSource, decode, make_schedule, train_base_model

src = MarkovSource(24, branching=3, seed=1)
corpus = src.sample(300, 60, 2)
model = train_base_model(corpus, order=3, smoothing=0.1)

prompt = corpus[0, :4]
for kind in ("random", "block", "confidence"):
    sch = make_schedule(kind, 24, prompt.size, block_len=5, seed=3)
    res = decode(model, prompt, sch, temperature=1.0, seed=4)
    print(f"{kind:>10}:", res.tokens.tolist())

# the audit trail says which neighbours conditioned each reveal
res = decode(model, prompt, make_schedule("random", 12, 4, seed=0))
for rec in res.audit[:3]:
    print(rec.to_json())
