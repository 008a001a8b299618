"""Shared hand-built inputs."""

# 10 rows: one malformed (no item), two single-event sessions for u3 (dropped),
# and item D seen once, so min_item_count=2 trims u2's session to [B, C].
# Expected: sessions [A, B], [C, A], [B, C]; items A=1, B=2, C=3; sides x=1, y=2.
TEN_EVENTS = """user,timestamp,item,side
u1,0,A,x
u1,60,B,x
u1,40000,C,y
u1,40060,A,x
u2,10,B,x
u2,20,C,y
u2,25,,x
u2,30,D,z
u3,5,E,w
u3,100000,E,w
"""

TEN_EVENTS_CONFIG = "dataset:\n  min_item_count: 2\nsplit:\n  test_fraction: 0.1\n"
