# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree builder and router.

Same algorithm as ``_fallback.py``: per-variable row orders are sorted once
at the root and stably partitioned at every split, so each node costs
O(rows x variables) without re-sorting.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport isnan, pow, sqrt, INFINITY, NAN
from libc.stdlib cimport malloc, calloc, free
from libc.string cimport memset
from libc.stdint cimport uint64_t, int64_t, int32_t, int8_t, uint8_t
from scipy.special.cython_special cimport chdtrc

cnp.import_array()


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double sq_sum(const int64_t* c, int q) noexcept nogil:
    cdef int64_t s = 0
    cdef int k
    for k in range(q):
        s += c[k] * c[k]
    return <double>s


cdef inline double midpoint(double a, double b) noexcept nogil:
    cdef double mid = a + (b - a) / 2.0
    if mid >= b:
        return a
    return mid


cdef inline double wilson_hilferty(double stat, int df) noexcept nogil:
    cdef double k
    if df <= 0:
        return -INFINITY
    k = 2.0 / (9.0 * df)
    return (pow(stat / df, 1.0 / 3.0) - (1.0 - k)) / sqrt(k)


cdef struct Cand:
    int found
    double crit
    double threshold
    int is_ordinal
    int missing_left
    int64_t n_left
    int64_t n_right


cdef class _Builder:
    cdef int n, p, po, pc, q, guide, min_node, max_depth, max_surr, n_bins, mtry, max_items
    cdef uint64_t rng
    cdef double** xo
    cdef int32_t** xc
    cdef int32_t* nlev
    cdef int8_t* vkind
    cdef int32_t* vcol
    cdef int64_t* ycls
    cdef double* yreg
    cdef int32_t* rows
    cdef int32_t* sorted_o
    cdef int32_t* tmp
    cdef uint8_t* left
    cdef int32_t* resp
    cdef int64_t* table
    cdef int64_t* itab
    cdef double* icnt
    cdef double* isum
    cdef int32_t* order
    cdef double* key
    cdef uint8_t* in_left
    cdef uint8_t* lmask
    cdef uint8_t* best_mask
    cdef uint8_t* keep_mask
    cdef int32_t* dfs
    cdef int64_t* cl
    cdef int64_t* cr
    cdef int64_t* tot
    cdef int64_t* mc
    cdef double* pv
    cdef double* zs
    cdef int32_t* cands
    cdef int32_t* perm
    cdef int32_t* pending
    cdef object callback
    cdef object xo_ref, xc_ref, y_ref, nlev_ref, vkind_ref, vcol_ref

    def __cinit__(self):
        self.xo = NULL
        self.xc = NULL

    def __dealloc__(self):
        free(self.xo); free(self.xc)
        free(self.rows); free(self.sorted_o); free(self.tmp); free(self.left); free(self.resp)
        free(self.table); free(self.itab); free(self.icnt); free(self.isum); free(self.order)
        free(self.key); free(self.in_left); free(self.lmask); free(self.best_mask); free(self.keep_mask); free(self.dfs)
        free(self.cl); free(self.cr); free(self.tot); free(self.mc)
        free(self.pv); free(self.zs); free(self.cands); free(self.perm); free(self.pending)

    cdef int64_t ncol_levels(self, int v) noexcept nogil:
        return self.nlev[self.vcol[v]]

    # -- node statistics ---------------------------------------------------

    cdef int is_pure(self, int start, int end) noexcept nogil:
        cdef int i, k, nz = 0
        cdef double lo, hi, yv
        if self.q > 0:
            memset(self.cl, 0, self.q * sizeof(int64_t))
            for i in range(start, end):
                self.cl[self.ycls[self.rows[i]]] += 1
            for k in range(self.q):
                if self.cl[k] > 0:
                    nz += 1
            return nz <= 1
        lo = self.yreg[self.rows[start]]
        hi = lo
        for i in range(start + 1, end):
            yv = self.yreg[self.rows[i]]
            if yv < lo:
                lo = yv
            if yv > hi:
                hi = yv
        return lo == hi

    # -- chi-squared variable screening ------------------------------------

    cdef void chisq_table(self, int nr, int nc, double* stat, int* df, double* pval) noexcept nogil:
        cdef int i, j, r = 0, c = 0
        cdef double total = 0.0, ri, e, d, s = 0.0
        cdef int64_t v
        # column sums into tot, row sums computed inline
        for j in range(nc):
            self.tot[j] = 0
        for i in range(nr):
            v = 0
            for j in range(nc):
                v += self.table[i * nc + j]
                self.tot[j] += self.table[i * nc + j]
            if v > 0:
                r += 1
                total += <double>v
        for j in range(nc):
            if self.tot[j] > 0:
                c += 1
        if r < 2 or c < 2:
            stat[0] = 0.0
            df[0] = 0
            pval[0] = 1.0
            return
        for i in range(nr):
            v = 0
            for j in range(nc):
                v += self.table[i * nc + j]
            if v == 0:
                continue
            ri = <double>v
            for j in range(nc):
                if self.tot[j] == 0:
                    continue
                e = ri * <double>self.tot[j] / total
                d = <double>self.table[i * nc + j] - e
                s += d * d / e
        stat[0] = s
        df[0] = (r - 1) * (c - 1)
        pval[0] = chdtrc(<double>df[0], s)

    cdef int n_observed(self, int j, int start, int end) noexcept nogil:
        # observed rows precede missing ones within every sorted segment
        cdef int lo = start, hi = end, mid
        cdef double* col = self.xo[j]
        cdef int32_t* srt = self.sorted_o + <int64_t>j * self.n
        while lo < hi:
            mid = (lo + hi) // 2
            if isnan(col[srt[mid]]):
                hi = mid
            else:
                lo = mid + 1
        return lo - start

    cdef void screen(self, int v, int start, int end, int qr, double* stat, int* df, double* pval) noexcept nogil:
        cdef int j = self.vcol[v], i, b, m, k, nb = self.n_bins, nl
        cdef double cuts[64]
        cdef double val
        cdef double* col
        cdef int32_t* srt
        cdef int32_t* xcol
        cdef int32_t code
        if self.vkind[v] == 0:
            col = self.xo[j]
            srt = self.sorted_o + <int64_t>j * self.n
            m = self.n_observed(j, start, end)
            memset(self.table, 0, (nb + 1) * qr * sizeof(int64_t))
            if m > 0:
                for k in range(1, nb):
                    cuts[k - 1] = col[srt[start + max((k * m) // nb - 1, 0)]]
            b = 0
            for i in range(start, start + m):
                val = col[srt[i]]
                while b < nb - 1 and cuts[b] < val:
                    b += 1
                self.table[b * qr + self.resp[srt[i]]] += 1
            for i in range(start + m, end):
                self.table[nb * qr + self.resp[srt[i]]] += 1
            self.chisq_table(nb + 1, qr, stat, df, pval)
        else:
            xcol = self.xc[j]
            nl = self.nlev[j]
            memset(self.table, 0, (nl + 1) * qr * sizeof(int64_t))
            for i in range(start, end):
                code = xcol[self.rows[i]]
                if code < 0:
                    code = nl
                self.table[code * qr + self.resp[self.rows[i]]] += 1
            self.chisq_table(nl + 1, qr, stat, df, pval)

    # -- ordinal split search ----------------------------------------------

    cdef Cand ordinal_split(self, int v, int start, int end, int use_missing) noexcept nogil:
        cdef Cand best
        cdef int j = self.vcol[v], q = self.q, i, k, m, nm, side, nsides
        cdef double* col = self.xo[j]
        cdef int32_t* srt = self.sorted_o + <int64_t>j * self.n
        cdef double c, lo, hi, totr = 0.0, mcr = 0.0, cl_, cr_
        cdef int64_t nl, nr
        best.found = 0
        best.crit = -INFINITY
        best.is_ordinal = 1
        m = self.n_observed(j, start, end)
        nm = (end - start - m) if use_missing else 0
        if m == 0:
            return best
        if q > 0:
            memset(self.tot, 0, q * sizeof(int64_t))
            memset(self.mc, 0, q * sizeof(int64_t))
            memset(self.cl, 0, q * sizeof(int64_t))
            for i in range(start, start + m):
                self.tot[self.ycls[srt[i]]] += 1
            for i in range(start + m, start + m + nm):
                self.mc[self.ycls[srt[i]]] += 1
        else:
            for i in range(start, start + m):
                totr += self.yreg[srt[i]]
            for i in range(start + m, start + m + nm):
                mcr += self.yreg[srt[i]]
        nsides = 2 if nm > 0 else 1
        lo = 0.0
        for i in range(1, m):
            if q > 0:
                self.cl[self.ycls[srt[start + i - 1]]] += 1
            else:
                lo += self.yreg[srt[start + i - 1]]
            if not (col[srt[start + i - 1]] < col[srt[start + i]]):
                continue
            for side in range(nsides):
                if side == 0:
                    nl = i + nm
                    nr = m - i
                else:
                    nl = i
                    nr = m - i + nm
                if nl < self.min_node or nr < self.min_node:
                    continue
                if q > 0:
                    for k in range(q):
                        if side == 0:
                            self.cr[k] = self.tot[k] - self.cl[k]
                        else:
                            self.cr[k] = self.tot[k] - self.cl[k] + self.mc[k]
                    if side == 0 and nm > 0:
                        for k in range(q):
                            self.cl[k] += self.mc[k]
                        c = sq_sum(self.cl, q) / nl + sq_sum(self.cr, q) / nr
                        for k in range(q):
                            self.cl[k] -= self.mc[k]
                    else:
                        c = sq_sum(self.cl, q) / nl + sq_sum(self.cr, q) / nr
                else:
                    hi = totr - lo
                    if side == 0:
                        if nm > 0:
                            cl_ = lo + mcr
                        else:
                            cl_ = lo
                        cr_ = hi
                    else:
                        cl_ = lo
                        cr_ = hi + mcr
                    c = cl_ * cl_ / nl + cr_ * cr_ / nr
                if c > best.crit:
                    best.found = 1
                    best.crit = c
                    best.threshold = midpoint(col[srt[start + i - 1]], col[srt[start + i]])
                    best.missing_left = side == 0
                    best.n_left = nl
                    best.n_right = nr
        if nm > 0 and nm >= self.min_node and m >= self.min_node:
            if q > 0:
                c = sq_sum(self.mc, q) / nm + sq_sum(self.tot, q) / m
            else:
                c = mcr * mcr / nm + totr * totr / m
            if (not best.found) or c > best.crit:
                best.found = 1
                best.crit = c
                best.threshold = -INFINITY
                best.missing_left = 1
                best.n_left = nm
                best.n_right = m
        if best.found and nm == 0 and best.threshold != -INFINITY:
            best.missing_left = best.n_left >= best.n_right
        return best

    # -- categorical split search ------------------------------------------

    cdef int item_stats(self, int v, int start, int end, int use_missing, int* has_missing) noexcept nogil:
        # Fills itab/icnt/isum with one row per present level then missing;
        # returns the number of present levels. order[] maps item -> level.
        cdef int j = self.vcol[v], nl = self.nlev[j], i, k, q = self.q, it
        cdef int32_t* xcol = self.xc[j]
        cdef int32_t code, r
        cdef int width = q if q > 0 else 1
        memset(self.table, 0, (nl + 1) * width * sizeof(int64_t))
        for k in range(nl + 1):
            self.icnt[k] = 0.0
            self.isum[k] = 0.0
        for i in range(start, end):
            r = self.rows[i]
            code = xcol[r]
            if code < 0:
                code = nl
            if q > 0:
                self.table[code * q + self.ycls[r]] += 1
            else:
                self.icnt[code] += 1.0
                self.isum[code] += self.yreg[r]
        # compact into item rows
        it = 0
        for k in range(nl + 1):
            if k == nl:
                break
            if q > 0:
                if self.row_total(k, q) == 0:
                    continue
            elif self.icnt[k] == 0.0:
                continue
            self.perm[it] = k
            it += 1
        has_missing[0] = 0
        if use_missing:
            if q > 0:
                if self.row_total(nl, q) > 0:
                    has_missing[0] = 1
            elif self.icnt[nl] > 0.0:
                has_missing[0] = 1
        if has_missing[0]:
            self.perm[it] = nl
        if q > 0:
            for k in range(it + has_missing[0]):
                for i in range(q):
                    self.itab[k * q + i] = self.table[self.perm[k] * q + i]
        else:
            # perm is increasing, so in-place compaction reads ahead safely
            for k in range(it + has_missing[0]):
                self.icnt[k] = self.icnt[self.perm[k]]
                self.isum[k] = self.isum[self.perm[k]]
        return it

    cdef int64_t row_total(self, int k, int q) noexcept nogil:
        cdef int64_t s = 0
        cdef int i
        for i in range(q):
            s += self.table[k * q + i]
        return s

    cdef void sort_items(self, int K) noexcept nogil:
        # insertion sort of order[0:K] by (key, index)
        cdef int i, j, cur
        for i in range(K):
            self.order[i] = i
        for i in range(1, K):
            cur = self.order[i]
            j = i - 1
            while j >= 0 and (self.key[self.order[j]] > self.key[cur] or
                              (self.key[self.order[j]] == self.key[cur] and self.order[j] > cur)):
                self.order[j + 1] = self.order[j]
                j -= 1
            self.order[j + 1] = cur

    cdef Cand prefix_search(self, int K, int p) noexcept nogil:
        cdef Cand best
        cdef int i, k, q = self.q, it, nobs_left = 0
        cdef int64_t nl, nr, ntot = 0, szl = 0
        cdef double c, lo = 0.0, tot = 0.0, dsz = 0.0, dn = 0.0, hi
        best.found = 0
        best.crit = -INFINITY
        best.is_ordinal = 0
        memset(self.in_left, 0, K)
        if q > 0:
            memset(self.cl, 0, q * sizeof(int64_t))
            memset(self.tot, 0, q * sizeof(int64_t))
            for i in range(K):
                for k in range(q):
                    self.tot[k] += self.itab[self.order[i] * q + k]
            for k in range(q):
                ntot += self.tot[k]
        else:
            for i in range(K):
                dn += self.icnt[self.order[i]]
                tot += self.isum[self.order[i]]
        for i in range(1, K):
            it = self.order[i - 1]
            self.in_left[it] = 1
            if it < p:
                nobs_left += 1
            if q > 0:
                for k in range(q):
                    self.cl[k] += self.itab[it * q + k]
                    szl += self.itab[it * q + k]
                nl = szl
                nr = ntot - szl
            else:
                dsz += self.icnt[it]
                lo += self.isum[it]
                nl = <int64_t>dsz
                nr = <int64_t>(dn - dsz)
            if nl < self.min_node or nr < self.min_node or nobs_left == 0 or nobs_left == p:
                continue
            if q > 0:
                for k in range(q):
                    self.cr[k] = self.tot[k] - self.cl[k]
                c = sq_sum(self.cl, q) / <double>nl + sq_sum(self.cr, q) / <double>nr
            else:
                hi = tot - lo
                c = lo * lo / dsz + hi * hi / (dn - dsz)
            if c > best.crit:
                best.found = 1
                best.crit = c
                best.n_left = nl
                best.n_right = nr
                for k in range(K):
                    self.best_mask[k] = self.in_left[k]
        return best

    cdef Cand categorical_split(self, int v, int start, int end, int use_missing) except *:
        cdef Cand best
        cdef int has_missing = 0, p, K, k, i, q = self.q, j1, qp
        cdef int64_t s
        cdef int nl_ = self.nlev[self.vcol[v]]
        best.found = 0
        best.is_ordinal = 0
        p = self.item_stats(v, start, end, use_missing, &has_missing)
        K = p + has_missing
        if p < 2:
            return best
        if q == 0:
            for k in range(K):
                self.key[k] = self.isum[k] / self.icnt[k]
            self.sort_items(K)
            best = self.prefix_search(K, p)
        else:
            qp = 0
            j1 = -1
            for i in range(q):
                s = 0
                for k in range(K):
                    s += self.itab[k * q + i]
                if s > 0:
                    qp += 1
                    if j1 < 0:
                        j1 = i
            if j1 < 0:
                j1 = 0
            if qp <= 2:
                for k in range(K):
                    s = 0
                    for i in range(q):
                        s += self.itab[k * q + i]
                    self.key[k] = <double>self.itab[k * q + j1] / <double>s
                self.sort_items(K)
                best = self.prefix_search(K, p)
            else:
                best = self.call_multiclass(K, p, has_missing)
        if best.found:
            # best_mask is over items; translate to a level mask
            memset(self.lmask, 0, nl_ + 1)
            for k in range(p):
                if self.best_mask[k]:
                    self.lmask[self.perm[k]] = 1
            if has_missing:
                best.missing_left = self.best_mask[p]
            else:
                best.missing_left = best.n_left >= best.n_right
        return best

    cdef Cand call_multiclass(self, int K, int p, int has_missing) except *:
        cdef Cand best
        cdef int k, i, q = self.q
        cdef int64_t nl = 0, nr = 0
        best.found = 0
        best.is_ordinal = 0
        stats = np.empty((K, q), dtype=np.int64)
        cdef int64_t[:, ::1] sv = stats
        for k in range(K):
            for i in range(q):
                sv[k, i] = self.itab[k * q + i]
        res = self.callback(stats, p, bool(has_missing), self.min_node)
        if res is None:
            return best
        mask, crit = res
        cdef const uint8_t[::1] mv = mask
        for k in range(K):
            self.best_mask[k] = mv[k]
            for i in range(q):
                if mv[k]:
                    nl += self.itab[k * q + i]
                else:
                    nr += self.itab[k * q + i]
        best.found = 1
        best.crit = crit
        best.n_left = nl
        best.n_right = nr
        return best

    # -- parent criteria ---------------------------------------------------

    cdef double parent_crit_all(self, int start, int end) noexcept nogil:
        cdef int i
        cdef double s = 0.0
        if self.q > 0:
            memset(self.cl, 0, self.q * sizeof(int64_t))
            for i in range(start, end):
                self.cl[self.ycls[self.rows[i]]] += 1
            return sq_sum(self.cl, self.q) / (end - start)
        for i in range(start, end):
            s += self.yreg[self.rows[i]]
        return s * s / (end - start)

    cdef double parent_crit_observed(self, int v, int start, int end) noexcept nogil:
        cdef int i, m = 0, j = self.vcol[v]
        cdef int32_t r
        cdef double s = 0.0
        if self.q > 0:
            memset(self.cl, 0, self.q * sizeof(int64_t))
        for i in range(start, end):
            r = self.rows[i]
            if self.vkind[v] == 0:
                if isnan(self.xo[j][r]):
                    continue
            elif self.xc[j][r] < 0:
                continue
            m += 1
            if self.q > 0:
                self.cl[self.ycls[r]] += 1
            else:
                s += self.yreg[r]
        if self.q > 0:
            return sq_sum(self.cl, self.q) / m
        return s * s / m

    # -- routing -----------------------------------------------------------

    cdef inline int observed(self, int v, int32_t r) noexcept nogil:
        if self.vkind[v] == 0:
            return not isnan(self.xo[self.vcol[v]][r])
        return self.xc[self.vcol[v]][r] >= 0

    cdef void partition(self, int start, int end, int nleft) noexcept nogil:
        cdef int j, i, a, b
        cdef int32_t* seg
        a = start
        b = start + nleft
        for i in range(start, end):
            if self.left[self.rows[i]]:
                self.tmp[a] = self.rows[i]
                a += 1
            else:
                self.tmp[b] = self.rows[i]
                b += 1
        for i in range(start, end):
            self.rows[i] = self.tmp[i]
        for j in range(self.po):
            seg = self.sorted_o + <int64_t>j * self.n
            a = start
            b = start + nleft
            for i in range(start, end):
                if self.left[seg[i]]:
                    self.tmp[a] = seg[i]
                    a += 1
                else:
                    self.tmp[b] = seg[i]
                    b += 1
            for i in range(start, end):
                seg[i] = self.tmp[i]

    cdef object surrogates(self, int v, int start, int end):
        """Surrogate search; rows observed on v have ``left`` set."""
        cdef int u, i, j, nb, n_left, baseline, best_agree, agree, k, bi, nl_
        cdef int32_t r, code
        cdef double* col
        cdef int32_t* srt
        cdef int32_t* xcol
        cdef int64_t cl_, cr_, prev_ok
        cdef double prev_val, best_thr
        found = []
        for u in range(self.p):
            if u == v:
                continue
            nb = 0
            n_left = 0
            for i in range(start, end):
                r = self.rows[i]
                if self.observed(v, r) and self.observed(u, r):
                    nb += 1
                    n_left += self.left[r]
            if nb == 0:
                continue
            baseline = n_left if n_left > nb - n_left else nb - n_left
            if self.vkind[u] == 0:
                col = self.xo[self.vcol[u]]
                srt = self.sorted_o + <int64_t>self.vcol[u] * self.n
                cl_ = 0
                cr_ = 0
                best_agree = -1
                best_thr = 0.0
                prev_ok = 0
                prev_val = 0.0
                for i in range(start, end):
                    r = srt[i]
                    if isnan(col[r]):
                        break
                    if not self.observed(v, r):
                        continue
                    if prev_ok and prev_val < col[r]:
                        agree = <int>(cl_ + ((nb - n_left) - cr_))
                        if agree > best_agree:
                            best_agree = agree
                            best_thr = midpoint(prev_val, col[r])
                    if self.left[r]:
                        cl_ += 1
                    else:
                        cr_ += 1
                    prev_ok = 1
                    prev_val = col[r]
                if best_agree < 0 or best_agree <= baseline:
                    continue
                found.append((-(<double>best_agree / nb), u, best_thr, None, <double>best_agree / nb))
            else:
                xcol = self.xc[self.vcol[u]]
                nl_ = self.nlev[self.vcol[u]]
                for k in range(2 * (nl_ + 1)):
                    self.table[k] = 0
                for i in range(start, end):
                    r = self.rows[i]
                    code = xcol[r]
                    if code < 0 or not self.observed(v, r):
                        continue
                    if self.left[r]:
                        self.table[2 * code] += 1
                    else:
                        self.table[2 * code + 1] += 1
                agree = 0
                bi = 0
                j = 0
                for k in range(nl_):
                    if self.table[2 * k] + self.table[2 * k + 1] == 0:
                        continue
                    if self.table[2 * k] >= self.table[2 * k + 1]:
                        agree += <int>self.table[2 * k]
                        bi += 1
                    else:
                        agree += <int>self.table[2 * k + 1]
                        j += 1
                if bi == 0 or j == 0 or agree <= baseline:
                    continue
                sub = np.array([k for k in range(nl_)
                                if self.table[2 * k] + self.table[2 * k + 1] > 0
                                and self.table[2 * k] >= self.table[2 * k + 1]], dtype=np.int32)
                found.append((-(<double>agree / nb), u, NAN, sub, <double>agree / nb))
        found.sort()  # by (-rate, variable); variables are distinct
        return [(t[1], t[2], t[3], t[4]) for t in found[:self.max_surr]]

    cdef int route_greedy(self, int v, int start, int end, list surs):
        cdef int i, k, ns = len(surs), u, decided, nleft = 0, nright = 0, npend = 0, majority
        cdef int32_t r
        cdef double thr
        cdef int32_t code
        cdef int* su = <int*>malloc((ns + 1) * sizeof(int))
        cdef double* st = <double*>malloc((ns + 1) * sizeof(double))
        masks = []
        for k in range(ns):
            su[k] = surs[k][0]
            st[k] = surs[k][1]
            if surs[k][2] is not None:
                mk = np.zeros(self.nlev[self.vcol[su[k]]] + 1, dtype=np.uint8)
                mk[surs[k][2]] = 1
                masks.append(mk)
            else:
                masks.append(None)
        cdef uint8_t[::1] mview
        for i in range(start, end):
            r = self.rows[i]
            if self.observed(v, r):
                if self.left[r]:
                    nleft += 1
                else:
                    nright += 1
                continue
            decided = 0
            for k in range(ns):
                u = su[k]
                if not self.observed(u, r):
                    continue
                if self.vkind[u] == 0:
                    self.left[r] = self.xo[self.vcol[u]][r] <= st[k]
                else:
                    mview = masks[k]
                    self.left[r] = mview[self.xc[self.vcol[u]][r]]
                decided = 1
                break
            if decided:
                if self.left[r]:
                    nleft += 1
                else:
                    nright += 1
            else:
                self.pending[npend] = r
                npend += 1
        majority = nleft >= nright
        for i in range(npend):
            self.left[self.pending[i]] = majority
        free(su)
        free(st)
        return majority

    # -- driver ------------------------------------------------------------

    def build(self):
        cdef int start, end, parent, is_left, depth, nt, k, i, v, t, nleft, best_v, qr, df, nc
        cdef int ncand, found, bi
        cdef double stat, pval, gain, best_gain, parent_crit
        cdef Cand cand, best
        cdef int32_t r
        cdef int32_t[::1] leaf_of = np.full(self.n, -1, dtype=np.int32)
        cdef int q = self.q
        L_left, L_right, L_parent, L_var, L_depth, L_n = [], [], [], [], [], []
        L_thr, L_miss, L_sub, L_sur, L_gain, L_stats = [], [], [], [], [], []
        stack = [(0, self.n, -1, 0, 0)]
        while stack:
            start, end, parent, is_left, depth = stack.pop()
            nt = end - start
            k = len(L_left)
            L_left.append(-1); L_right.append(-1); L_parent.append(parent); L_var.append(-1)
            L_depth.append(depth); L_n.append(nt); L_thr.append(NAN); L_miss.append(0)
            L_sub.append(None); L_sur.append([]); L_gain.append(NAN)
            L_stats.append(self.node_stats(start, end))
            if parent >= 0:
                if is_left:
                    L_left[parent] = k
                else:
                    L_right[parent] = k
            found = 0
            if not (nt < 2 * self.min_node or (0 <= self.max_depth <= depth) or self.is_pure(start, end)):
                ncand = self.draw(self.mtry)
                best.found = 0
                if self.guide:
                    found = self.choose_guide(ncand, start, end, &best_v, &best, &parent_crit)
                    gain = best.crit - parent_crit
                else:
                    best_gain = 0.0
                    best_v = -1
                    for t in range(ncand):
                        v = self.cands[t]
                        if self.vkind[v] == 0:
                            cand = self.ordinal_split(v, start, end, 0)
                        else:
                            cand = self.categorical_split(v, start, end, 0)
                        if not cand.found:
                            continue
                        gain = cand.crit - self.parent_crit_observed(v, start, end)
                        if gain > best_gain:
                            best_gain = gain
                            best_v = v
                            best = cand
                            if not cand.is_ordinal:
                                for i in range(self.nlev[self.vcol[v]] + 1):
                                    self.keep_mask[i] = self.lmask[i]
                    found = best_v >= 0
                    gain = best_gain
                    if found and not best.is_ordinal:
                        for i in range(self.nlev[self.vcol[best_v]] + 1):
                            self.lmask[i] = self.keep_mask[i]
            if not found:
                for i in range(start, end):
                    leaf_of[self.rows[i]] = k
                continue
            v = best_v
            L_var[k] = v
            L_gain[k] = gain
            if best.is_ordinal:
                L_thr[k] = best.threshold
            else:
                L_sub[k] = np.array([i for i in range(self.nlev[self.vcol[v]]) if self.lmask[i]],
                                    dtype=np.int32)
            for i in range(start, end):
                r = self.rows[i]
                if self.observed(v, r):
                    if best.is_ordinal:
                        self.left[r] = self.xo[self.vcol[v]][r] <= best.threshold
                    else:
                        self.left[r] = self.lmask[self.xc[self.vcol[v]][r]]
                else:
                    self.left[r] = best.missing_left
            if self.guide:
                L_miss[k] = int(best.missing_left)
            else:
                surs = self.surrogates(v, start, end)
                L_sur[k] = surs
                L_miss[k] = self.route_greedy(v, start, end, surs)
            nleft = 0
            for i in range(start, end):
                nleft += self.left[self.rows[i]]
            self.partition(start, end, nleft)
            stack.append((start + nleft, end, k, 0, depth + 1))
            stack.append((start, start + nleft, k, 1, depth + 1))
        out = dict(
            left=np.array(L_left, dtype=np.int32),
            right=np.array(L_right, dtype=np.int32),
            parent=np.array(L_parent, dtype=np.int32),
            var=np.array(L_var, dtype=np.int32),
            depth=np.array(L_depth, dtype=np.int32),
            n=np.array(L_n, dtype=np.int64),
            threshold=np.array(L_thr, dtype=np.float64),
            missing_left=np.array(L_miss, dtype=np.uint8),
            gain=np.array(L_gain, dtype=np.float64),
            subset=L_sub,
            surrogates=L_sur,
            leaf_of=np.asarray(leaf_of),
        )
        if q > 0:
            out["counts"] = np.array(L_stats, dtype=np.int64).reshape(-1, q)
        else:
            out["sums"] = np.array(L_stats, dtype=np.float64).reshape(-1, 2)
        return out

    cdef object node_stats(self, int start, int end):
        cdef int i
        cdef double s = 0.0, s2 = 0.0, yv
        if self.q > 0:
            memset(self.cl, 0, self.q * sizeof(int64_t))
            for i in range(start, end):
                self.cl[self.ycls[self.rows[i]]] += 1
            return [self.cl[i] for i in range(self.q)]
        for i in range(start, end):
            yv = self.yreg[self.rows[i]]
            s += yv
            s2 += yv * yv
        return [s, s2]

    cdef int draw(self, int mtry):
        cdef int i, j, t, p = self.p
        cdef int32_t tmpv
        if mtry <= 0 or mtry >= p:
            for i in range(p):
                self.cands[i] = i
            return p
        for i in range(p):
            self.perm[i] = i
        for i in range(mtry):
            j = i + <int>(splitmix_next(&self.rng) % <uint64_t>(p - i))
            tmpv = self.perm[i]
            self.perm[i] = self.perm[j]
            self.perm[j] = tmpv
        for i in range(mtry):
            self.cands[i] = self.perm[i]
        # insertion sort ascending
        for i in range(1, mtry):
            tmpv = self.cands[i]
            j = i - 1
            while j >= 0 and self.cands[j] > tmpv:
                self.cands[j + 1] = self.cands[j]
                j -= 1
            self.cands[j + 1] = tmpv
        return mtry

    cdef int choose_guide(self, int ncand, int start, int end, int* best_v, Cand* best,
                          double* parent_crit) except -1:
        cdef int i, t, v, qr, df, n_ok = 0, bi, tried
        cdef double stat, pval, mean = 0.0
        cdef Cand cand
        cdef int32_t r
        # response classes for screening
        if self.q > 0:
            qr = self.q
            for i in range(start, end):
                r = self.rows[i]
                self.resp[r] = <int32_t>self.ycls[r]
        else:
            qr = 2
            for i in range(start, end):
                mean += self.yreg[self.rows[i]]
            mean = mean / (end - start)
            for i in range(start, end):
                r = self.rows[i]
                self.resp[r] = 1 if self.yreg[r] > mean else 0
        parent_crit[0] = self.parent_crit_all(start, end)
        for t in range(ncand):
            v = self.cands[t]
            self.screen(v, start, end, qr, &stat, &df, &pval)
            self.pv[t] = pval
            self.zs[t] = wilson_hilferty(stat, df) if df > 0 else -INFINITY
            self.dfs[t] = df
        # try variables in order of (p, -z, index); df == 0 never qualifies
        for tried in range(ncand):
            bi = -1
            for t in range(ncand):
                if self.dfs[t] <= 0:
                    continue
                if bi < 0 or self.pv[t] < self.pv[bi] or (
                        self.pv[t] == self.pv[bi] and (self.zs[t] > self.zs[bi] or (
                            self.zs[t] == self.zs[bi] and self.cands[t] < self.cands[bi]))):
                    bi = t
            if bi < 0:
                return 0
            self.dfs[bi] = 0
            v = self.cands[bi]
            if self.vkind[v] == 0:
                cand = self.ordinal_split(v, start, end, 1)
            else:
                cand = self.categorical_split(v, start, end, 1)
            if cand.found:
                best_v[0] = v
                best[0] = cand
                return 1
        return 0


def build_tree(xo, xc, nlev, var_kind, var_col, y, int q, bint guide=True, int min_node=1,
               int max_depth=-1, int max_surrogates=5, int n_bins=4, int mtry=0, seed=0,
               callback=None):
    """Grow one tree on all rows.

    ``xo`` (n, po) float64 with NaN for missing; ``xc`` (n, pc) int32 with -1
    for missing; variable ``v`` is column ``var_col[v]`` of ``xo`` when
    ``var_kind[v] == 0`` else of ``xc``. ``y`` holds class codes when
    ``q > 0`` and numeric values when ``q == 0``. ``callback`` searches
    categorical splits for responses with more than two classes.
    """
    cdef _Builder b = _Builder()
    cdef int n = y.shape[0], j, i, k, maxl = 0
    cdef double[::1, :] xov
    cdef int32_t[::1, :] xcv
    if n_bins < 2 or n_bins > 64:
        raise ValueError("n_bins must lie in [2, 64]")
    b.xo_ref = np.asfortranarray(xo, dtype=np.float64)
    b.xc_ref = np.asfortranarray(xc, dtype=np.int32)
    b.nlev_ref = np.ascontiguousarray(nlev, dtype=np.int32)
    b.vkind_ref = np.ascontiguousarray(var_kind, dtype=np.int8)
    b.vcol_ref = np.ascontiguousarray(var_col, dtype=np.int32)
    b.n = n
    b.p = b.vkind_ref.shape[0]
    b.po = b.xo_ref.shape[1]
    b.pc = b.xc_ref.shape[1]
    b.q = q
    b.guide = guide
    b.min_node = max(min_node, 1)
    b.max_depth = max_depth
    b.max_surr = max_surrogates
    b.n_bins = n_bins
    b.mtry = mtry
    b.rng = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    b.callback = callback
    cdef int32_t[::1] nlv = b.nlev_ref
    cdef int8_t[::1] vk = b.vkind_ref
    cdef int32_t[::1] vc = b.vcol_ref
    b.nlev = &nlv[0] if nlv.shape[0] else NULL
    b.vkind = &vk[0] if vk.shape[0] else NULL
    b.vcol = &vc[0] if vc.shape[0] else NULL
    for j in range(b.pc):
        if nlv[j] > maxl:
            maxl = nlv[j]
    b.max_items = maxl + 1
    b.xo = <double**>malloc((b.po + 1) * sizeof(double*))
    b.xc = <int32_t**>malloc((b.pc + 1) * sizeof(int32_t*))
    if b.po and n:
        xov = b.xo_ref
        for j in range(b.po):
            b.xo[j] = &xov[0, j]
    if b.pc and n:
        xcv = b.xc_ref
        for j in range(b.pc):
            b.xc[j] = &xcv[0, j]
    cdef int64_t[::1] ycv
    cdef double[::1] yrv
    if q > 0:
        b.y_ref = np.ascontiguousarray(y, dtype=np.int64)
        ycv = b.y_ref
        b.ycls = &ycv[0]
    else:
        b.y_ref = np.ascontiguousarray(y, dtype=np.float64)
        yrv = b.y_ref
        b.yreg = &yrv[0]
    cdef int width = max(q, 2)
    cdef int tabrows = max(b.max_items, n_bins + 1) + 1
    b.rows = <int32_t*>malloc((n + 1) * sizeof(int32_t))
    b.sorted_o = <int32_t*>malloc((<int64_t>b.po * n + 1) * sizeof(int32_t))
    b.tmp = <int32_t*>malloc((n + 1) * sizeof(int32_t))
    b.left = <uint8_t*>calloc(n + 1, 1)
    b.resp = <int32_t*>calloc(n + 1, sizeof(int32_t))
    b.table = <int64_t*>calloc(<int64_t>tabrows * width + 2 * tabrows, sizeof(int64_t))
    b.itab = <int64_t*>calloc(<int64_t>tabrows * width, sizeof(int64_t))
    b.icnt = <double*>calloc(tabrows, sizeof(double))
    b.isum = <double*>calloc(tabrows, sizeof(double))
    b.order = <int32_t*>calloc(tabrows, sizeof(int32_t))
    b.key = <double*>calloc(tabrows, sizeof(double))
    b.in_left = <uint8_t*>calloc(tabrows, 1)
    b.lmask = <uint8_t*>calloc(tabrows, 1)
    b.best_mask = <uint8_t*>calloc(tabrows, 1)
    b.keep_mask = <uint8_t*>calloc(tabrows, 1)
    b.dfs = <int32_t*>calloc(b.p + 1, sizeof(int32_t))
    b.cl = <int64_t*>calloc(width, sizeof(int64_t))
    b.cr = <int64_t*>calloc(width, sizeof(int64_t))
    b.tot = <int64_t*>calloc(max(width, n_bins + 1, tabrows), sizeof(int64_t))
    b.mc = <int64_t*>calloc(width, sizeof(int64_t))
    b.pv = <double*>calloc(b.p + 1, sizeof(double))
    b.zs = <double*>calloc(b.p + 1, sizeof(double))
    b.cands = <int32_t*>calloc(b.p + 1, sizeof(int32_t))
    b.perm = <int32_t*>calloc(max(b.p, tabrows) + 1, sizeof(int32_t))
    b.pending = <int32_t*>calloc(n + 1, sizeof(int32_t))
    for i in range(n):
        b.rows[i] = i
    # presort ordinal columns: observed by (value, row), then missing by row
    cdef int32_t[::1] srt
    for j in range(b.po):
        col = b.xo_ref[:, j]
        miss = np.isnan(col)
        obs = np.flatnonzero(~miss)
        obs = obs[np.argsort(col[obs], kind="stable")]
        srt = np.concatenate([obs, np.flatnonzero(miss)]).astype(np.int32)
        for i in range(n):
            b.sorted_o[<int64_t>j * n + i] = srt[i]
    return b.build()


def route_rows(int32_t[::1] left, int32_t[::1] right, int32_t[::1] var, double[::1] threshold,
               uint8_t[::1] missing_left, int64_t[::1] sub_ptr, uint8_t[::1] sub_mask,
               int64_t[::1] sur_ptr, int32_t[::1] sur_var, double[::1] sur_thr,
               int64_t[::1] sur_sub_ptr, xo, xc, int8_t[::1] var_kind, int32_t[::1] var_col):
    """Leaf index of every row of ``xo``/``xc`` (flattened tree arrays)."""
    xo_f = np.asfortranarray(xo, dtype=np.float64)
    xc_f = np.asfortranarray(xc, dtype=np.int32)
    cdef int n = max(xo_f.shape[0], xc_f.shape[0])
    cdef double[::1, :] xov = xo_f if xo_f.shape[1] else np.zeros((n, 1), dtype=np.float64, order="F")
    cdef int32_t[::1, :] xcv = xc_f if xc_f.shape[1] else np.zeros((n, 1), dtype=np.int32, order="F")
    out = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] ov = out
    cdef int i, k, v, u, s, decided, go
    cdef int32_t code
    cdef double x
    with nogil:
        for i in range(n):
            k = 0
            while left[k] >= 0:
                v = var[k]
                go = -1
                if var_kind[v] == 0:
                    x = xov[i, var_col[v]]
                    if not isnan(x):
                        go = x <= threshold[k]
                else:
                    code = xcv[i, var_col[v]]
                    if code >= 0:
                        go = sub_mask[sub_ptr[k] + code]
                if go < 0:
                    for s in range(sur_ptr[k], sur_ptr[k + 1]):
                        u = sur_var[s]
                        if var_kind[u] == 0:
                            x = xov[i, var_col[u]]
                            if not isnan(x):
                                go = x <= sur_thr[s]
                                break
                        else:
                            code = xcv[i, var_col[u]]
                            if code >= 0:
                                go = sub_mask[sur_sub_ptr[s] + code]
                                break
                if go < 0:
                    go = missing_left[k]
                k = left[k] if go else right[k]
            ov[i] = k
    return out
