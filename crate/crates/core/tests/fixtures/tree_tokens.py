# Counts syntax tokens in the printed exemplar tree with a standalone tokenizer.
import re
S = "(ROOT (FRAG (NP (DT) (NN)) (PP (IN) (NP (NP (DT) (NN)) (VP (VBG) (PP (IN) (NP (NP (DT) (NN) (NN)) (PP (IN)(NP (DT) (NN))))))))))"
toks = re.findall(r"\(|\)|[^\s()]+", S)
print(len(toks), toks.count("("), toks.count(")"))
