unsigned char scale(unsigned char x) {
    return (unsigned char)(x * 3u);
}

unsigned char accum(unsigned char a) {
    static unsigned char s = 0u;
    s = (unsigned char)(s + a);
    return s;
}

unsigned char clip(unsigned char c) {
    return c > 200u ? (unsigned char)200u : c;
}

unsigned char pipeline_top(unsigned char x) {
    return clip(accum(scale(x)));
}
