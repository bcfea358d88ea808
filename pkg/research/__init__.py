"""Desk-scale reproduction scripts and synthetic scenes"""
