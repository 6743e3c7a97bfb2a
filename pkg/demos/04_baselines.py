"""Left-only hashing and an inverse-table scheme, next to the two-sided one.
The inverse table is a |V| x |V| bit matrix, so it grows quadratically."""
from lrdwm import Vocabulary, WatermarkKey
from lrdwm.baselines import build_inverse_table, inverse_table_bytes

key = WatermarkKey(0x0123456789ABCDEF)
for V in (256, 1024, 4096):
    t = build_inverse_table(key, Vocabulary(V))
    print(f"|V|={V:5d} table {t.memory_bytes/1024:8.1f} KiB  built in {t.build_seconds*1e3:6.1f} ms")
print("predicted at 32768: %.1f MiB" % (inverse_table_bytes(32768) / 2**20))

t = build_inverse_table(key, Vocabulary(64))
u = 7
print("tokens whose green list contains 7:", t.row(u).nonzero()[0][:12], "...")
