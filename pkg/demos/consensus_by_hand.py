# %% [markdown]
# # Average vs vote on a hand-made similarity table
#
# The rules only see per-class similarity arrays, so we can feed them
# numbers directly and watch the two disagree.

# %%
import numpy as np

from siamshift.consensus import average_rule, vote_rule

# three exemplars per class, similarities of one query to each of them
sims = {0: np.array([0.9, 0.2, 0.5]), 1: np.array([0.6, 0.6, 0.0])}

# %%
avg = average_rule(sims)
avg.scores, avg.predicted

# %%
# vote counts exemplars above 0.5: class 0 gets one vote, class 1 two
vote = vote_rule(sims)
vote.votes, vote.predicted

# %% [markdown]
# A single confident match carries the average; the vote rewards breadth.
# An exact tie in the average goes to class 0 and is flagged.

# %%
tie = average_rule({0: np.array([0.5]), 1: np.array([0.5])})
tie.predicted, tie.tie_broken
