# %% [markdown]
# # From a bond graph to a variable graph
#
# We load the DC motor model, check its causality and coefficients, tabulate
# its bond matrix and compile the graph of effort and flow variables that the
# encoder later uses for message passing.

# %%
from importlib import resources

from nbge import build_bond_matrix, compile_dual_graph, emit_dsl, load_dsl, message_stencil, validate

motor = load_dsl(resources.files("nbge").joinpath("data/dc_motor.bg"))
print(emit_dsl(motor))

# %% [markdown]
# Validation returns an empty report for a well-formed model.

# %%
report = validate(motor)
print("ok:", report.ok, "violations:", len(report))

# %% [markdown]
# One row per bond. Each entry records which end of the bond the component
# sits on, its coefficient and whether it imposes effort or flow.

# %%
bm = build_bond_matrix(motor)
for rec in bm.to_records():
    print(rec)

# %% [markdown]
# Channel 0 is the supply voltage (effort on bond 1); channel 1 is the shaft
# speed (flow on bond 6). Flows through a 1-junction collapse into one node.

# %%
g = compile_dual_graph(bm, {0: (1, "e"), 1: (6, "f")})
print(g.n_nodes, "nodes,", len(g.edges), "edges")
print([n.name for n in g.nodes])

# %%
for name in ("e2", "e4"):
    print(name, "<-", [(src.name, origin.value, round(init.scale, 4)) for src, init, origin in message_stencil(g, name)])
